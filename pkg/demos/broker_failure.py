"""Kill the subscriber's edge broker and watch the overlay heal.

The controller notices the missing heartbeats, reconnects the survivors into
a tree, and the stranded consumer re-bootstraps onto another broker. Quotes
published after the repair reach it again.

    python demos/broker_failure.py
"""
from sdps.scenario import inject_fault, load_scenario
from sdps.simulator import SimConfig, run

SCENARIO = """\
0 join-broker
1 join-broker
2 join-broker
3 join-broker
5 join-client producer @b1
6 join-client consumer @b3
10 advertise c1 [price,present]
11 subscribe c2 [price,<,50]
20 publish c1 [price,1]
300 publish c1 [price,2]
"""

events = inject_fault(load_scenario(SCENARIO), "b3", 30)
result = run(events, SimConfig())
sim = result.sim
topology = sim.controller.topology

print("repairs:", sim.repairs)
print("tree after repair:", sorted((str(a), str(b)) for a, b in topology.edges()))
print("consumer now attached to", sim.clients["c2"].edge)
print("re-bootstrapped clients:", sorted(sim.recovered))
print(result.log.text(), end="")
assert topology.is_tree() and result.log.delivered() == {("c2", 0), ("c2", 1)}
