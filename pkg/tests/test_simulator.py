import pytest

from helpers import scenario_text
from sdps.model import NodeId
from sdps.oracle import oracle_deliveries
from sdps.scenario import ScenarioError, format_scenario, inject_fault, load_scenario
from sdps.simulator import SimConfig, collect_metrics, run

S1 = scenario_text("s1.txt")


def test_load_small_scenario():
    ev = load_scenario("0 join-broker\n1 join-client producer\n2 advertise c1 [price,<,100]\n")
    assert [e.action for e in ev] == ["join-broker", "join-client", "advertise"]


def test_malformed_filter_reports_line():
    with pytest.raises(ScenarioError) as err:
        load_scenario("0 join-broker\n\n1 join-client producer\n3 advertise c1 [price,<,'x']\n")
    assert err.value.line == 4


def test_format_round_trip():
    ev = load_scenario(S1)
    assert load_scenario(format_scenario(ev)) == ev


@pytest.mark.parametrize("forwarding", ["adv", "rendezvous"])
def test_s1_three_deliveries(forwarding):
    r = run(load_scenario(S1), SimConfig(forwarding=forwarding))
    prices = sorted(rec.publication["price"] for rec in r.log)
    assert prices == [10, 35, 49]
    assert r.log.delivered() == oracle_deliveries(load_scenario(S1)).deliveries == {("c2", 0), ("c2", 1), ("c2", 3)}


def test_same_seed_same_bytes():
    ev = load_scenario(scenario_text("p1.txt"))
    assert run(ev, seed=3).log.text() == run(ev, seed=3).log.text()


def test_empty_run():
    r = run([])
    assert r.log == [] and r.metrics.deliveries == 0


def test_zero_traffic_counters():
    r = run(load_scenario("0 join-broker\n1 join-broker\n"))
    assert r.metrics.deliveries == r.metrics.feedback == r.metrics.dropped == 0
    assert "total" in collect_metrics(r)


def test_no_subscriptions_no_deliveries():
    ev = [e for e in load_scenario(S1) if e.action != "subscribe"]
    assert run(ev).log == []


FAIL_BASE = """\
0 join-broker
1 join-broker
2 join-broker
3 join-broker
5 join-client producer @b1
6 join-client consumer @b3
10 advertise c1 [price,present]
11 subscribe c2 [price,<,50]
20 publish c1 [price,1]
"""


def run_with_fault(alias, forwarding="adv"):
    ev = load_scenario(FAIL_BASE + "300 publish c1 [price,2]\n")
    ev = inject_fault(ev, alias, 30)
    return run(ev, SimConfig(forwarding=forwarding))


def test_fail_leaf_without_clients():
    r = run_with_fault("b4")
    assert r.log.delivered() == {("c2", 0), ("c2", 1)}
    assert r.sim.recovered == set()


@pytest.mark.parametrize("forwarding", ["adv", "rendezvous"])
def test_fail_subscriber_edge(forwarding):
    r = run_with_fault("b3", forwarding)
    assert "c2" in r.sim.recovered and not r.sim.orphaned
    assert r.sim.clients["c2"].edge != NodeId("broker", 3)
    assert r.log.delivered() == {("c2", 0), ("c2", 1)}
    assert not r.log.duplicates()


@pytest.mark.parametrize("forwarding", ["adv", "rendezvous"])
def test_fail_root(forwarding):
    r = run_with_fault("b1", forwarding)
    assert r.sim.controller.topology.rendezvous == NodeId("broker", 2)
    assert r.sim.controller.topology.is_tree()
    assert ("c2", 1) in r.log.delivered()


def test_repairs_are_recorded():
    r = run_with_fault("b2")
    (rep,) = r.sim.repairs
    assert rep["complete"] >= rep["detected"] > 30


OWNER_LEAVES = """\
0 join-broker
1 join-broker
2 join-broker
5 join-client advertiser @b2
6 join-client producer @b3
7 join-client consumer @b1
10 subscribe c3 [topic,present]
12 install-policy c1 POLICY id=1 target=producer WHEN [meta.topic,present] DO insert_ad [topic,=,$meta.topic]
20 depart-client c1
30 metadata c2 [meta.topic,'a']
50 publish c2 [topic,'a']
51 publish c2 [topic,'b']
"""


@pytest.mark.parametrize("strategy", ["metadata-flood", "policy-flood", "rendezvous"])
def test_policies_outlive_their_owner(strategy):
    ev = load_scenario(OWNER_LEAVES)
    r = run(ev, SimConfig(strategy=strategy))
    assert r.log.delivered() == oracle_deliveries(ev, strategy).deliveries == {("c3", 0)}


REWRITTEN = """\
0 join-broker
1 join-broker
2 join-broker
5 join-client interest-manager @b1
6 join-client producer @b1
7 join-client consumer @b3
10 advertise c2 [price,present]
11 subscribe c3 [price,<,20]
12 metadata c3 [meta.zone,'n']
20 install-policy c1 POLICY id=1 target=consumer WHEN [meta.zone,present] DO modify [price,present] WITH =[price,<,$old.price+20]
40 publish c2 [price,30]
"""


@pytest.mark.parametrize("strategy", ["metadata-flood", "policy-flood", "rendezvous"])
def test_rewritten_subscription_survives_edge_failure(strategy):
    ev = inject_fault(load_scenario(REWRITTEN + "400 publish c2 [price,35]\n400 publish c2 [price,45]\n"), "b3", 60)
    r = run(ev, SimConfig(strategy=strategy))
    assert "c3" in r.sim.recovered
    assert r.log.delivered() == oracle_deliveries(ev, strategy).deliveries == {("c3", 0), ("c3", 1)}
    assert r.sim.generated_entries() == {("c3", "sub", "[price,<,40]", 1)}
