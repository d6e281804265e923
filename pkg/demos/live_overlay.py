"""The same quote scenario, this time over real TCP daemons on localhost.

A controller, brokers and clients run as asyncio tasks in this process and
speak the line protocol to each other. The delivered set must match the
simulator's.

    python demos/live_overlay.py
"""
import asyncio
import time

from sdps.net import LiveHarness
from sdps.scenario import load_scenario
from sdps.simulator import run

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
start = time.perf_counter()
live = asyncio.run(LiveHarness(events).run())
print(f"live run took {time.perf_counter() - start:.2f}s")
print("live deliveries:", sorted(live))
assert live == run(events).log.delivered()
print("matches the simulator")
