"""A small stock-quote overlay run through the deterministic simulator.

Three brokers form a chain. One producer advertises prices, one consumer
subscribes to cheap quotes, and four quotes are published. The run is then
compared with the topology-free oracle.

    python demos/quickstart.py
"""
from sdps.oracle import oracle_deliveries
from sdps.scenario import load_scenario
from sdps.simulator import SimConfig, collect_metrics, run

SCENARIO = """\
0 join-broker
1 join-broker
2 join-broker
5 join-client producer @b1
6 join-client consumer @b3
10 advertise c1 [price,<,100]
12 subscribe c2 [price,<,50]
20 publish c1 [price,10]
21 publish c1 [price,35]
22 publish c1 [price,75]
23 publish c1 [price,49]
"""

events = load_scenario(SCENARIO)
for forwarding in ("adv", "rendezvous"):
    result = run(events, SimConfig(forwarding=forwarding))
    print(f"--- {forwarding} forwarding")
    print(result.log.text(), end="")
    print(collect_metrics(result))
    assert result.log.delivered() == oracle_deliveries(events).deliveries

print("both forwarding modes agree with the oracle")
