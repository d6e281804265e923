from collections import deque

import pytest

from sdps.broker import Broker, RoutingFault
from sdps.client import Client
from sdps.model import CONTROLLER_ID, NodeId, format_filter, parse_filter, parse_publication
from sdps.routing import StrategyConfig

B1, B2, B3, B4 = (NodeId("broker", i) for i in range(1, 5))


class Net:
    """Brokers on a chain, driven to quiescence with one FIFO queue."""

    def __init__(self, n=3, forwarding="adv"):
        ids = [NodeId("broker", i) for i in range(1, n + 1)]
        self.brokers = {}
        for k, b in enumerate(ids):
            nbrs = [x for x in (ids[k - 1] if k else None, ids[k + 1] if k + 1 < n else None) if x]
            hops = {d: (ids[k + 1] if j > k else ids[k - 1]) for j, d in enumerate(ids) if d != b}
            self.brokers[b] = Broker(b, forwarding=forwarding, neighbors=nbrs, next_hop=hops,
                                     control=StrategyConfig("policy-flood", ids[0]))
        self.clients = {}
        self.queue = deque()
        self.to_controller = []
        self.traffic = []
        self._n = 100

    def client(self, role, edge, mode="drop"):
        self._n += 1
        c = Client(role, mode, id=NodeId(role, self._n))
        self.clients[c.id] = c
        self.push(c.id, c.attach(edge))
        return c

    def push(self, frm, out):
        for hop, m in out:
            self.queue.append((frm, hop, m))
        self.run()

    def run(self):
        while self.queue:
            frm, hop, m = self.queue.popleft()
            self.traffic.append((frm, hop, m.type))
            if hop == CONTROLLER_ID:
                self.to_controller.append(m)
            elif hop in self.brokers:
                for nxt, m2 in self.brokers[hop].handle(m, frm):
                    self.queue.append((hop, nxt, m2))
            elif hop in self.clients:
                for nxt, m2 in self.clients[hop].receive(m):
                    self.queue.append((hop, nxt, m2))

    def snapshot(self):
        return {b: (sorted(e.id for e in x.art), sorted(e.id for e in x.srt)) for b, x in self.brokers.items()}


def test_advertisement_floods_with_last_hop():
    net = Net()
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    (ad,) = list(net.brokers[B2].art)
    assert net.brokers[B2].last_hop[ad.id] == B1
    assert len(net.brokers[B3].art) == 1


def test_duplicate_message_is_ignored():
    net = Net()
    p = net.client("producer", B1)
    out = p.advertise(parse_filter("[price,<,100]"))
    net.push(p.id, out)
    before = net.snapshot()
    assert net.brokers[B2].handle(out[0][1], B1) == []
    assert net.snapshot() == before


def test_subscription_follows_reverse_path():
    net = Net()
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    c = net.client("consumer", B3)
    net.traffic.clear()
    net.push(c.id, c.subscribe(parse_filter("[price,<,50]")))
    hops = [(f, h) for f, h, t in net.traffic if t == "SUB"]
    assert hops == [(c.id, B3), (B3, B2), (B2, B1)]


def test_subscription_without_advertisement_stays_local():
    net = Net()
    c = net.client("consumer", B3)
    net.push(c.id, c.subscribe(parse_filter("[price,<,50]")))
    assert len(net.brokers[B3].srt) == 1
    assert len(net.brokers[B2].srt) == 0


def test_unsubscribe_restores_tables():
    net = Net()
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    c = net.client("consumer", B3)
    before = net.snapshot()
    f = parse_filter("[price,<,50]")
    net.push(c.id, c.subscribe(f))
    net.push(c.id, c.unsubscribe(f))
    assert net.snapshot() == before


def test_unknown_unsubscribe_is_silent():
    net = Net()
    c = net.client("consumer", B3)
    assert c.unsubscribe(parse_filter("[a,=,1]")) == []


def setup_s1(forwarding="adv", mode="drop"):
    net = Net(forwarding=forwarding)
    p = net.client("producer", B1, mode)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    c = net.client("consumer", B3)
    net.push(c.id, c.subscribe(parse_filter("[price,<,50]")))
    return net, p, c


@pytest.mark.parametrize("forwarding", ["adv", "rendezvous"])
def test_one_delivery_two_hops_away(forwarding):
    net, p, c = setup_s1(forwarding)
    net.push(p.id, p.publish(parse_publication("[price,35]")))
    assert len(c.deliveries) == 1


def test_unadvertised_publication_dropped():
    net, p, c = setup_s1()
    net.traffic.clear()
    net.push(p.id, p.publish(parse_publication("[price,200]")))
    assert [t for t in net.traffic if t[0] != p.id] == []
    assert c.deliveries == [] and p.feedback == []


def test_unadvertised_publication_feedback():
    net, p, c = setup_s1(mode="feedback")
    net.push(p.id, p.publish(parse_publication("[price,200]")))
    assert len(p.feedback) == 1 and c.deliveries == []


def test_rendezvous_root_without_subscribers_is_silent():
    net = Net(forwarding="rendezvous")
    p = net.client("producer", B3)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    net.traffic.clear()
    net.push(p.id, p.publish(parse_publication("[price,1]")))
    assert [t for t in net.traffic if t[2] == "DELIVER"] == []


def test_rendezvous_relays_through_root():
    net = Net(n=4, forwarding="rendezvous")
    p = net.client("producer", B2)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    c = net.client("consumer", B4)
    net.push(c.id, c.subscribe(parse_filter("[price,<,50]")))
    net.traffic.clear()
    net.push(p.id, p.publish(parse_publication("[price,5]")))
    path = [(f, h) for f, h, t in net.traffic if t in ("PUB", "DELIVER")]
    assert path[:2] == [(p.id, B2), (B2, B1)]
    assert path[-1] == (B4, c.id)
    assert len(c.deliveries) == 1


def test_detach_withdraws_every_entry():
    net = Net()
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    before = net.snapshot()
    c = net.client("consumer", B3)
    net.push(c.id, c.subscribe(parse_filter("[price,<,50]")))
    net.push(c.id, c.subscribe(parse_filter("[price,>,80]")))
    net.traffic.clear()
    net.push(c.id, c.depart())
    assert sum(1 for f, h, t in net.traffic if t == "UNSUB" and h == B2) == 2
    assert net.snapshot() == before


def test_remove_neighbor_purges_learned_entries():
    net, p, c = setup_s1()
    b2 = net.brokers[B2]
    b2.handle_control_command({"op": "remove-neighbor", "neighbor": "b1"})
    assert all(b2.last_hop[e.id] != B1 for e in b2.art)
    assert len(b2.art) == 0


def test_migration_reissues_from_new_edge():
    net, p, c = setup_s1()
    out = net.brokers[B3].handle_control_command(
        {"op": "migrate-clients", "clients": [str(c.id)], "to": "b2"})
    net.traffic.clear()
    net.push(B3, out)
    assert sum(1 for f, h, t in net.traffic if f == c.id and t == "SUB") == 1
    assert c.edge == B2
    assert any(e.source == c.id for e in net.brokers[B2].srt if net.brokers[B2].last_hop[e.id] == c.id)
    net.push(p.id, p.publish(parse_publication("[price,5]")))
    assert len(c.deliveries) == 1


def test_route_directed():
    net = Net()
    b1 = net.brokers[B1]
    m = b1.heartbeat()
    assert b1.route_directed(B1, m) is None
    assert b1.route_directed(B3, m) == (B2, m)
    with pytest.raises(RoutingFault):
        b1.route_directed(NodeId("broker", 9), m)


def test_set_rendezvous_redirects_publications():
    net = Net(forwarding="rendezvous")
    for b in net.brokers.values():
        b.handle_control_command({"op": "set-rendezvous", "broker": "b3"})
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,<,100]")))
    net.traffic.clear()
    net.push(p.id, p.publish(parse_publication("[price,5]")))
    assert (B1, B2, "PUB") in net.traffic and (B2, B3, "PUB") in net.traffic


def policy_net():
    from sdps.policy import parse_policy

    net = Net()
    im = net.client("interest-manager", B1)
    p = net.client("producer", B1)
    net.push(p.id, p.advertise(parse_filter("[price,present]")))
    c = net.client("consumer", B3)
    pol = parse_policy("POLICY id=1 target=consumer WHEN [meta.zone,present] DO insert_sub [price,<,$meta.cap]")
    net.push(im.id, im.install_policy(pol))
    net.push(c.id, c.set_metadata(parse_publication("[meta.zone,'n'],[meta.cap,10]")))
    return net, p, c


def generated_at(broker, c):
    return [format_filter(e.filter) for e in broker.srt.entries_by_source(c.id)
            if e.origin is not None and broker.last_hop.get(e.id) == c.id]


def test_migration_carries_generated_entries_without_refiring():
    net, p, c = policy_net()
    fired = sum(sum(b.store.firing_counts.values()) for b in net.brokers.values())
    assert c.generated[1].entries and generated_at(net.brokers[B3], c)
    net.push(B3, net.brokers[B3].handle_control_command(
        {"op": "migrate-clients", "clients": [str(c.id)], "to": "b2"}))
    assert generated_at(net.brokers[B2], c) == ["[price,<,10]"] and generated_at(net.brokers[B3], c) == []
    assert sum(sum(b.store.firing_counts.values()) for b in net.brokers.values()) == fired
    net.push(p.id, p.publish(parse_publication("[price,5]")))
    assert len(c.deliveries) == 1


def test_each_version_is_decided_once_at_the_edge():
    from sdps.wire import Bundle, Message
    from sdps.policy import InsertEntry
    from sdps.model import MessageId

    b = Broker(B1)
    c = NodeId("consumer", 7)
    b.handle_client_attach(c)
    act = (InsertEntry("sub", parse_filter("[price,<,5]")),)

    def fire(version, fire=True, removed=False):
        bundle = Bundle(1, c, version, parse_publication("[meta.x,1]"), act if fire else (), fire, removed)
        return b.handle(Message("FIRE", MessageId(B2, version), B2, bundle), B2)

    fire(1, fire=False)
    fire(1)
    assert len(b.srt) == 0
    out = fire(2)
    assert len(b.srt) == 1 and [m.body.version for h, m in out if m.type == "STATE"] == [2]
    fire(2, fire=False, removed=True)
    assert len(b.srt) == 0


def test_state_from_a_broker_is_refused():
    from sdps.wire import GenState, Message
    from sdps.model import MessageId

    b = Broker(B1)
    out = b.handle(Message("STATE", MessageId(B2, 1), B2, GenState(1, 1, True, ())), B2)
    assert [m.type for _, m in out] == ["ERR"]


def test_losing_a_broker_resends_root_bound_subscriptions():
    net = Net(n=4, forwarding="rendezvous")
    c = net.client("consumer", B4)
    net.push(c.id, c.subscribe(parse_filter("[price,<,5]")))
    b4 = net.brokers[B4]
    out = b4.handle_control_command({"op": "next-hops", "table": {"b1": "b3", "b3": "b3"}})
    assert [(h, m.type, m.to) for h, m in out] == [(NodeId("broker", 3), "SUB", B1)]
