"""An interest manager keeps a consumer's subscription pinned to its location.

The policy inserts ``[tag,=,'g'],[zone,=,$meta.zone]`` for every consumer
that reports a zone. When the consumer moves, the old generated subscription
is replaced, so only quotes for the current zone arrive.
The same scenario runs under each control-routing strategy.

    python demos/location_policy.py
"""
from sdps.routing import STRATEGIES
from sdps.scenario import load_scenario
from sdps.simulator import SimConfig, run

SCENARIO = """\
0 join-broker
1 join-broker
2 join-broker
5 join-client producer @b1
6 join-client consumer @b3
7 join-client interest-manager @b2
10 advertise c1 [zone,present]
12 metadata c2 [meta.zone,'north']
20 install-policy c3 POLICY id=1 target=consumer WHEN [meta.zone,present] DO insert_sub [tag,=,'g'],[zone,=,$meta.zone]
40 publish c1 [tag,'g'],[zone,'north']
41 publish c1 [tag,'g'],[zone,'south']
60 metadata c2 [meta.zone,'south']
80 publish c1 [tag,'g'],[zone,'north']
81 publish c1 [tag,'g'],[zone,'south']
"""

events = load_scenario(SCENARIO)
for strategy in STRATEGIES:
    result = run(events, SimConfig(strategy=strategy))
    zones = [rec.publication["zone"] for rec in result.log]
    print(f"{strategy:15} generated={sorted(result.sim.generated_entries())}")
    print(f"{'':15} delivered zones in order: {zones}")
    assert zones == ["north", "south"]
