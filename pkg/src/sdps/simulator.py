"""Deterministic discrete-event harness.

Controller, brokers and clients run in one process and exchange
:class:`~sdps.wire.Message` objects over an in-memory transport. Every hop
takes one logical time unit; ties are broken by scheduling order, so a run is
a pure function of its events and configuration.
"""
from __future__ import annotations

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .broker import Broker
from .client import Client
from .controller import Command, Controller, ControllerConfig
from .model import CONTROLLER_ID, MessageId, NodeId, format_publication
from .oracle import OracleResult, entry_key, oracle_deliveries
from .routing import POLICY_FLOOD, StrategyConfig, verify_quorum
from .scenario import Event, inject_fault, load_scenario
from .wire import Message

log = logging.getLogger(__name__)

__all__ = [
    "Event", "SimConfig", "Simulation", "RunResult", "DeliveryLog", "Metrics",
    "load_scenario", "inject_fault", "oracle_deliveries", "OracleResult", "run",
    "collect_metrics",
]


@dataclass(frozen=True)
class SimConfig:
    strategy: str = POLICY_FLOOD
    forwarding: str = "adv"
    controller: Optional[ControllerConfig] = None
    client_timeout: int = 5
    heartbeats: Optional[bool] = None  # None: only when the scenario needs them

    def controller_config(self) -> ControllerConfig:
        base = self.controller or ControllerConfig()
        return ControllerConfig(**{**base.__dict__, "strategy": self.strategy,
                                   "forwarding": self.forwarding})


@dataclass(frozen=True)
class DeliveryRecord:
    time: int
    subscriber: str
    subscriber_id: NodeId
    sub_id: object
    pub_index: Optional[int]
    publication: object

    def line(self) -> str:
        return f"{self.time} {self.subscriber_id} {self.sub_id} {format_publication(self.publication)}"


class DeliveryLog(list):
    def text(self) -> str:
        return "".join(r.line() + "\n" for r in self)

    def delivered(self) -> set:
        """(subscriber alias, publication index) pairs."""
        return {(r.subscriber, r.pub_index) for r in self}

    def duplicates(self) -> Counter:
        c = Counter((r.subscriber, r.pub_index) for r in self)
        return Counter({k: n for k, n in c.items() if n > 1})


@dataclass
class Metrics:
    broker_counts: dict = field(default_factory=dict)
    hops: Counter = field(default_factory=Counter)
    deliveries: int = 0
    feedback: int = 0
    dropped: int = 0
    lost: int = 0
    routing_faults: int = 0


@dataclass
class RunResult:
    log: DeliveryLog
    metrics: Metrics
    sim: "Simulation"


class Simulation:
    def __init__(self, config: SimConfig | None = None, seed: int = 0):
        self.config = config or SimConfig()
        self.seed = seed
        self.controller = Controller(self.config.controller_config())
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.brokers: dict[NodeId, Broker] = {}
        self.failed: set = set()
        self.broker_alias: dict[str, NodeId] = {}
        self.clients: dict[str, Client] = {}
        self.client_by_id: dict[NodeId, str] = {}
        self._boot: dict[int, tuple] = {}
        self._nonce = 0
        self.log = DeliveryLog()
        self.metrics = Metrics()
        self.n_pubs = 0
        self.pub_times: dict[int, int] = {}
        self.repairs: list[dict] = []
        self.errors: list = []
        self.orphaned: set = set()  # lost their edge, not yet re-attached
        self.recovered: set = set()  # re-attached after losing their edge
        self._hb_until = -1
        self._broker_joins = 0

    # -- scheduling -----------------------------------------------------------------

    def at(self, time: int, fn: Callable, *args) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, self._seq, fn, args))

    def send(self, frm: NodeId, to: NodeId, msg: Message, delay: int = 1) -> None:
        if frm.is_broker and to.is_broker:
            self.metrics.hops[msg.type] += 1
        self.at(self.now + delay, self._deliver, frm, to, msg)

    def run_until_idle(self, limit: int | None = None) -> None:
        while self._queue:
            t, _, fn, args = self._queue[0]
            if limit is not None and t > limit:
                break
            heapq.heappop(self._queue)
            self.now = t
            fn(*args)

    # -- transport ------------------------------------------------------------------

    def _deliver(self, frm: NodeId, to: NodeId, msg: Message) -> None:
        if to == CONTROLLER_ID:
            self._to_controller(frm, msg)
        elif to.is_broker:
            b = self.brokers.get(to)
            if b is None or to in self.failed:
                self.metrics.lost += 1
                return
            for hop, m in b.handle(msg, frm):
                self.send(to, hop, m)
        else:
            alias = self.client_by_id.get(to)
            if alias is None:
                self.metrics.lost += 1
                return
            c = self.clients[alias]
            if c.departed:
                return
            if msg.type == "DELIVER":
                self._record(c, alias, msg)
            elif msg.type == "FEEDBACK":
                self.metrics.feedback += 1
            self._route(c, c.receive(msg, self.now))

    def _route(self, c: Client, out) -> None:
        for dest, m in out:
            self.send(c.id, dest, m)

    def _record(self, c: Client, alias: str, msg: Message) -> None:
        d = msg.body
        producer = self.client_by_id.get(msg.id.source)
        idx = self.clients[producer].pub_tags.get(msg.id) if producer else None
        self.metrics.deliveries += 1
        self.log.append(DeliveryRecord(self.now, alias, c.id, d.sub_id, idx, d.publication))

    def _to_controller(self, frm: NodeId, msg: Message) -> None:
        if msg.type == "ERR":
            self.errors.append((self.now, str(frm), msg.body.get("error")))
            if msg.body.get("fault") == "routing":
                self.metrics.routing_faults += 1
        replies, cmds = self.controller.handle(msg, self.now)
        for to, m in replies:
            if m.type == "BOOTACK":
                self._bootack(m.body)
            elif to.num == 0:
                self.errors.append((self.now, "controller", m.body.get("error")))
            else:
                self.send(CONTROLLER_ID, to, m)
        self._commands(cmds)

    def _commands(self, cmds: list[Command], extra: int = 0) -> None:
        for cmd in cmds:
            m = self.controller.command_message(cmd)
            self.send(CONTROLLER_ID, cmd.target, m, delay=1 + extra + int(cmd.delay))

    def _bootack(self, body: dict) -> None:
        kind, ref = self._boot.pop(body["nonce"])
        self.at(self.now + 1, self._booted, kind, ref, body)

    def _booted(self, kind: str, ref: str, body: dict) -> None:
        if kind == "broker":
            bid = NodeId.parse(body["id"])
            b = Broker(
                bid,
                forwarding=body["forwarding"],
                control=StrategyConfig(body["strategy"], NodeId.parse(body["rendezvous"])),
                neighbors=[NodeId.parse(n) for n in body["neighbors"]],
                next_hop={NodeId.parse(k): NodeId.parse(v) for k, v in body["next_hops"].items()},
            )
            self.brokers[bid] = b
            self.broker_alias[ref] = bid
            return
        c = self.clients[ref]
        if c.departed:
            return
        self.client_by_id[NodeId.parse(body["id"])] = ref
        if ref in self.orphaned:
            self.orphaned.discard(ref)
            self.recovered.add(ref)
        self._route(c, c.on_bootack(body))

    def _boot_request(self, kind: str, ref: str, msg: Message) -> None:
        self._nonce += 1
        body = dict(msg.body, nonce=self._nonce)
        self._boot[self._nonce] = (kind, ref)
        self.send(msg.sender, CONTROLLER_ID, Message(msg.type, msg.id, msg.sender, body))

    # -- scenario events --------------------------------------------------------------

    def broker(self, alias: str) -> Optional[NodeId]:
        return self.broker_alias.get(alias)

    def _event(self, ev: Event) -> None:
        a, args = ev.action, ev.args
        if a == "join-broker":
            self._broker_joins += 1
            temp = NodeId("broker", 0)
            self._boot_request("broker", f"b{self._broker_joins}",
                               Message("BOOT", MessageId(temp, 0), temp, {"role": "broker"}))
        elif a == "join-client":
            role, mode, hint = args
            alias = f"c{len(self.clients) + 1}"
            c = Client(role, mode, hint=self.broker(hint) if hint else None)
            self.clients[alias] = c
            self._boot_request("client", alias, c.boot_request())
        elif a == "publish":
            idx = self.n_pubs
            self.n_pubs += 1
            self.pub_times[idx] = ev.time
            self._client_op(args[0], "publish", args[1], idx)
        elif a in ("advertise", "subscribe", "unadvertise", "unsubscribe"):
            self._client_op(args[0], a, args[1])
        elif a == "metadata":
            self._client_op(args[0], "set_metadata", args[1])
        elif a == "install-policy":
            self._client_op(args[0], "install_policy", args[1])
        elif a == "remove-policy":
            self._client_op(args[0], "remove_policy", args[1])
        elif a == "depart-client":
            self._client_op(args[0], "depart")
        elif a == "fail-broker":
            self._fail(args[0])
        elif a == "heartbeat-tick":
            self._heartbeat_round()
            self.at(self.now + 2, self._controller_tick)
        elif a == "migrate":
            b = self.broker(args[0])
            self._heartbeat_round()
            self.at(self.now + 2, self._forced_migration, b)

    def _client_op(self, alias: str, op: str, *args) -> None:
        c = self.clients.get(alias)
        if c is None:
            self.errors.append((self.now, alias, f"unknown client {alias}"))
            return
        self._route(c, getattr(c, op)(*args))

    def _fail(self, alias: str) -> None:
        b = self.broker(alias)
        if b is None or b in self.failed:
            self.errors.append((self.now, alias, f"cannot fail {alias}"))
            return
        self.failed.add(b)
        for ca, c in sorted(self.clients.items()):
            if c.edge == b and c.attached and not c.departed:
                c.lost_edge()
                self.orphaned.add(ca)
                self.at(self.now + self.config.client_timeout, self._rebootstrap, ca, b)

    def _rebootstrap(self, alias: str, dead: NodeId) -> None:
        c = self.clients[alias]
        if c.departed or c.attached:
            return
        self._boot_request("client", alias, c.boot_request(exclude=[dead]))

    # -- heartbeats and controller sweeps -----------------------------------------------

    def _alive(self) -> list[NodeId]:
        return [b for b in sorted(self.brokers) if b not in self.failed]

    def _heartbeat_round(self) -> None:
        for bid in self._alive():
            self.send(bid, CONTROLLER_ID, self.brokers[bid].heartbeat())

    def _controller_tick(self) -> None:
        cmds = self.controller.tick(self.now)
        if any(c.op == "remove-neighbor" or c.op == "next-hops" for c in cmds):
            settle = max((c.delay for c in cmds), default=0)
            self.repairs.append({"detected": self.now, "complete": self.now + 1 + int(settle)})
        self._commands(cmds)

    def _forced_migration(self, b: NodeId | None) -> None:
        if b is not None:
            self._commands(self.controller.plan_migration(b))

    def _periodic(self) -> None:
        if self.now > self._hb_until:
            return
        period = int(self.controller.config.heartbeat_period)
        self._heartbeat_round()
        self.at(self.now + period // 2, self._controller_tick)
        self.at(self.now + period, self._periodic)

    # -- driver ---------------------------------------------------------------------------

    def load(self, events) -> None:
        events = sorted(events, key=lambda e: e.time)
        for ev in events:
            self.at(ev.time, self._event, ev)
        hb = self.config.heartbeats
        if hb is None:
            hb = any(e.action in ("fail-broker", "heartbeat-tick", "migrate") for e in events)
        if hb and events:
            cc = self.controller.config
            self._hb_until = events[-1].time + int(
                (cc.failure_multiplier + 3) * cc.heartbeat_period + cc.repair_settle + 50)
            self.at(int(cc.heartbeat_period), self._periodic)

    # -- observation ----------------------------------------------------------------------

    def alias_of(self, node: NodeId) -> str:
        return self.client_by_id.get(node, str(node))

    def live_entries(self) -> set:
        """Entries as held at each client's edge broker, keyed like the oracle's."""
        out = set()
        for bid in self._alive():
            b = self.brokers[bid]
            for table in (b.art, b.srt):
                for e in table:
                    if b.last_hop.get(e.id) == e.source and e.source in b.clients:
                        out.add(entry_key(self.alias_of(e.source), e))
        return out

    def generated_entries(self) -> set:
        return {k for k in self.live_entries() if k[3] is not None}

    def firing_counts(self) -> Counter:
        total = Counter()
        for b in self.brokers.values():
            total.update(b.store.firing_counts)
        return total

    def quorum_holds(self) -> bool:
        alive = {b: self.brokers[b] for b in self._alive()}
        policies = {}
        for b in alive.values():
            policies.update(b.store.policies)
        for b in alive.values():
            for pid, pol in b.local_policies.items():
                if pid not in b.store.pub_policies:
                    policies[pid] = pol
        metadata = [b.local_meta[c] for b in alive.values() for c in b.local_meta]
        placement = {bid: (set(b.store.policies), {c for c, md in b.store.metadata.items()})
                     for bid, b in alive.items()}
        cfg = StrategyConfig(self.config.strategy, self.controller.topology.rendezvous)
        return verify_quorum(cfg, self.controller.topology, policies.values(), metadata, placement)


def run(events, config: SimConfig | None = None, seed: int = 0) -> RunResult:
    """Execute ``events`` to quiescence and return the delivery log and metrics."""
    sim = Simulation(config, seed)
    sim.load(events)
    sim.run_until_idle()
    m = sim.metrics
    m.broker_counts = {str(b): Counter(sim.brokers[b].stats) for b in sorted(sim.brokers)}
    m.dropped = sum(b.stats["dropped"] for b in sim.brokers.values())
    return RunResult(sim.log, m, sim)


def collect_metrics(result: RunResult) -> str:
    """Aligned text table of per-broker message counters plus totals."""
    m = result.metrics
    types = sorted({t for c in m.broker_counts.values() for t in c})
    header = ["broker"] + types
    rows = [[b] + [str(c.get(t, 0)) for t in types] for b, c in m.broker_counts.items()]
    total = Counter()
    for c in m.broker_counts.values():
        total.update(c)
    rows.append(["total"] + [str(total.get(t, 0)) for t in types])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(x.rjust(w) for x, w in zip(r, widths)).rstrip()
    lines = [fmt(header)] + [fmt(r) for r in rows]
    lines.append("")
    for k, v in (("deliveries", m.deliveries), ("feedback", m.feedback), ("dropped", m.dropped),
                 ("lost", m.lost), ("routing-faults", m.routing_faults),
                 ("broker-hops", sum(m.hops.values()))):
        lines.append(f"{k:<15}{v}")
    return "\n".join(lines) + "\n"
