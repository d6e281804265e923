import asyncio
import subprocess
import sys
import time

import pytest

from helpers import DATA
from sdps.controller import ControllerConfig
from sdps.model import NodeId, parse_filter, parse_publication
from sdps.net import BrokerDaemon, ClientRunner, ControllerDaemon, Link, split_addr

B1, B2, B3 = (NodeId("broker", i) for i in range(1, 4))


def arun(coro, timeout=20):
    return asyncio.run(asyncio.wait_for(coro, timeout))


async def overlay(n, **cfg):
    ctl = ControllerDaemon(ControllerConfig(**cfg))
    addr = await ctl.start()
    brokers = []
    for _ in range(n):
        d = BrokerDaemon(addr)
        await d.start()
        brokers.append(d)
    return ctl, addr, brokers


async def shutdown(ctl, brokers, clients=()):
    for c in clients:
        await c.close()
    for d in brokers:
        await d.stop()
    await ctl.stop()


async def until(pred, timeout=5.0):
    end = asyncio.get_running_loop().time() + timeout
    while not pred():
        if asyncio.get_running_loop().time() > end:
            return False
        await asyncio.sleep(0.02)
    return True


def test_two_brokers_form_one_edge():
    async def main():
        ctl, addr, brokers = await overlay(2)
        ids = [d.broker.id for d in brokers]
        await until(lambda: B2 in brokers[0].broker.neighbors and B1 in brokers[1].links)
        edges = ctl.controller.topology.edges()
        await shutdown(ctl, brokers)
        return ids, edges, brokers[1].broker.neighbors

    ids, edges, nbrs = arun(main())
    assert ids == [B1, B2]
    assert edges == {(B1, B2)}
    assert nbrs == {B1}


def test_publication_crosses_the_overlay():
    async def main():
        ctl, addr, brokers = await overlay(3)
        p = ClientRunner(addr, "producer", "feedback", hint=B2)
        c = ClientRunner(addr, "consumer", hint=B3)
        await p.start()
        await c.start()
        p.do("advertise", parse_filter("[price,<,100]"))
        await asyncio.sleep(0.2)
        c.do("subscribe", parse_filter("[price,<,50]"))
        await asyncio.sleep(0.2)
        for price in (10, 60, 20, 500):
            p.do("publish", parse_publication(f"[price,{price}]"))
        ok = await until(lambda: len(c.client.deliveries) == 2 and len(p.client.feedback) == 1)
        await asyncio.sleep(0.1)
        got = sorted(d.publication["price"] for d in c.client.deliveries)
        await shutdown(ctl, brokers, [p, c])
        return ok, got, len(p.client.feedback)

    ok, got, fb = arun(main())
    assert ok and got == [10, 20] and fb == 1


def test_broker_loss_is_repaired_and_clients_reconnect():
    async def main():
        ctl, addr, brokers = await overlay(3, heartbeat_period=0.1, repair_settle=0.1)
        # b2 and b3 both hang off b1; the consumer sits on b3
        p = ClientRunner(addr, "producer", hint=B2, timeout=0.1)
        c = ClientRunner(addr, "consumer", hint=B3, timeout=0.1)
        await p.start()
        await c.start()
        p.do("advertise", parse_filter("[price,present]"))
        await asyncio.sleep(0.2)
        c.do("subscribe", parse_filter("[price,<,50]"))
        await asyncio.sleep(0.2)
        await brokers[2].stop()
        detected = await until(lambda: B3 in ctl.controller.failed, 3)
        moved = await until(lambda: c.client.attached and c.client.edge != B3, 3)
        await asyncio.sleep(0.4)
        p.do("publish", parse_publication("[price,7]"))
        got = await until(lambda: len(c.client.deliveries) == 1, 3)
        tree = ctl.controller.topology.is_tree()
        await shutdown(ctl, brokers[:2], [p, c])
        return detected, moved, got, tree

    assert arun(main()) == (True, True, True, True)


def test_client_departure_is_not_a_failure():
    async def main():
        ctl, addr, brokers = await overlay(1, heartbeat_period=0.1)
        c = ClientRunner(addr, "consumer")
        await c.start()
        await c.close()
        await asyncio.sleep(0.5)
        failed = set(ctl.controller.failed)
        await shutdown(ctl, brokers)
        return failed

    assert arun(main()) == set()


def test_malformed_line_gets_an_error_reply():
    async def main():
        ctl = ControllerDaemon()
        addr = await ctl.start()
        reader, writer = await asyncio.open_connection(*split_addr(addr))
        link = Link(reader, writer)
        writer.write(b"v1 BOOT x:1 nonsense\n")
        reply = await link.recv()
        link.close()
        await ctl.stop()
        return reply

    reply = arun(main())
    assert reply.type == "ERR"


def test_live_replay_matches_simulator_on_s1():
    from sdps.net import LiveHarness
    from sdps.scenario import load_scenario
    from sdps.simulator import run

    ev = load_scenario((DATA / "s1.txt").read_text())
    live = asyncio.run(LiveHarness(ev).run())
    assert live == run(ev).log.delivered()


# -- command line --------------------------------------------------------------------

def sdps(*args, **kw):
    return subprocess.run([sys.executable, "-m", "sdps", *args], capture_output=True, text=True, timeout=30, **kw)


def spawn(*args):
    return subprocess.Popen([sys.executable, "-m", "sdps", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True)


def test_broker_without_controller_exits_2():
    r = sdps("broker", "--controller", "127.0.0.1:1", "--retries", "2")
    assert r.returncode == 2


def test_usage_errors_exit_1():
    assert sdps("client", "wizard").returncode == 1
    assert sdps("sim", "run").returncode == 1


def test_sim_run_verify():
    r = sdps("sim", "run", str(DATA / "s1.txt"), "--verify")
    assert r.returncode == 0
    assert len(r.stdout.splitlines()) == 3


def test_sim_run_bad_scenario_exits_3(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("0 join-broker\n1 fly\n")
    assert sdps("sim", "run", str(f)).returncode == 3


@pytest.fixture
def daemons():
    ctl = spawn("controller", "--listen", "127.0.0.1:0", "--heartbeat", "0.5")
    line = ctl.stdout.readline().split()
    addr = line[1]
    procs = [ctl]
    for _ in range(2):
        b = spawn("broker", "--controller", addr)
        b.stdout.readline()
        procs.append(b)
    yield addr
    for p in procs:
        p.kill()
        p.wait()


def test_cli_consumer_prints_one_line(daemons):
    cons = spawn("client", "consumer", "--controller", daemons, "--hint", "b2",
                 "--subscribe", "[price,<,50]", "--count", "1")
    time.sleep(0.6)
    prod = sdps("client", "producer", "--controller", daemons, "--hint", "b1",
                "--advertise", "[price,<,100]", "--publish", "[price,35]", "--publish", "[price,70]")
    assert prod.returncode == 0
    out, _ = cons.communicate(timeout=10)
    assert cons.returncode == 0
    lines = out.splitlines()
    assert len(lines) == 1 and lines[0].endswith("[price,35]")


def test_cli_policy_generated_advertisement(daemons, tmp_path):
    pol = tmp_path / "country.pol"
    pol.write_text("# producers may publish on their own country\n"
                   "POLICY id=1 target=producer WHEN [meta.country,present] DO insert_ad [topic,=,$meta.country]\n")
    cons = spawn("client", "consumer", "--controller", daemons, "--hint", "b2",
                 "--subscribe", "[topic,=,'Norway']", "--count", "1")
    adv = sdps("client", "advertiser", "--controller", daemons, "--policy", str(pol))
    assert adv.returncode == 0
    time.sleep(0.3)
    prod = sdps("client", "producer", "--controller", daemons, "--hint", "b1",
                "--set", "[meta.country,'Norway']", "--publish", "[topic,'Norway'],[n,1]")
    assert prod.returncode == 0
    out, _ = cons.communicate(timeout=10)
    assert out.strip().endswith("[n,1],[topic,'Norway']")
