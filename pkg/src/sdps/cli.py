"""Command line entry point.

Exit codes: 0 ok, 1 usage, 2 connectivity, 3 scenario or verification failure.
The ``SDPS_LOG`` environment variable sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys

from .controller import ControllerConfig
from .model import NodeId, ParseError, parse_filter, parse_publication
from .oracle import oracle_deliveries
from .policy import PolicyError, parse_policies
from .routing import STRATEGIES
from .scenario import ROLE_ALIASES, ScenarioError, load_scenario
from .simulator import SimConfig, collect_metrics, run

EXIT_OK, EXIT_USAGE, EXIT_CONNECT, EXIT_FAIL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdps", description="Content-based publish/subscribe overlay tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("sim", help="discrete-event simulation")
    simsub = sim.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    r = simsub.add_parser("run", help="run a scenario file and print the delivery log")
    r.add_argument("scenario")
    r.add_argument("--control-routing", choices=STRATEGIES, default="metadata-flood")
    r.add_argument("--forwarding", choices=("adv", "rendezvous"), default="adv")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--metrics", action="store_true", help="print per-broker message counters")
    r.add_argument("--verify", action="store_true",
                   help="compare the delivered set against the reference replay")

    c = sub.add_parser("controller", help="run the controller daemon")
    c.add_argument("--listen", default="127.0.0.1:7000", metavar="H:P")
    c.add_argument("--control-routing", choices=STRATEGIES, default="metadata-flood")
    c.add_argument("--forwarding", choices=("adv", "rendezvous"), default="adv")
    c.add_argument("--heartbeat", type=float, default=1.0, help="heartbeat period in seconds")
    c.add_argument("--max-degree", type=int, default=4)

    b = sub.add_parser("broker", help="run a broker daemon")
    b.add_argument("--controller", required=True, metavar="H:P")
    b.add_argument("--listen", default="127.0.0.1:0", metavar="H:P")
    b.add_argument("--retries", type=int, default=5)

    cl = sub.add_parser("client", help="connect a client, issue operations, print what arrives")
    cl.add_argument("role", choices=sorted(set(ROLE_ALIASES) | {"meta"}))
    cl.add_argument("--controller", default="127.0.0.1:7000", metavar="H:P")
    cl.add_argument("--as", dest="as_role", default="producer",
                    help="role to join as when the role is 'meta'")
    cl.add_argument("--mode", choices=("drop", "feedback"), default="drop")
    cl.add_argument("--hint", help="preferred edge broker id, e.g. b2")
    cl.add_argument("--advertise", action="append", default=[], metavar="FILTER")
    cl.add_argument("--subscribe", action="append", default=[], metavar="FILTER")
    cl.add_argument("--set", "--meta", dest="meta", metavar="PUB", help="set client metadata")
    cl.add_argument("--policy", metavar="FILE", help="install every policy in FILE")
    cl.add_argument("--publish", action="append", default=[], metavar="PUB")
    cl.add_argument("--settle", type=float, default=0.3,
                    help="seconds between setup operations and the first publication")
    cl.add_argument("--count", type=int, help="exit after this many deliveries")
    cl.add_argument("--wait", type=float, default=0.5,
                    help="seconds to stay connected after the last operation")
    return p


def _split(addr: str) -> tuple[str, int]:
    from .net import split_addr
    try:
        return split_addr(addr)
    except ValueError as e:
        raise UsageError(str(e))


def cmd_sim(args) -> int:
    try:
        with open(args.scenario) as fh:
            events = load_scenario(fh.read())
    except OSError as e:
        print(f"sdps: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as e:
        print(f"sdps: {args.scenario}: {e}", file=sys.stderr)
        return EXIT_FAIL
    cfg = SimConfig(strategy=args.control_routing, forwarding=args.forwarding)
    result = run(events, cfg, seed=args.seed)
    sys.stdout.write(result.log.text())
    if args.metrics:
        print(collect_metrics(result))
    if args.verify:
        expected = oracle_deliveries(events, args.control_routing, args.forwarding).deliveries
        got = result.log.delivered()
        if got != expected or result.log.duplicates():
            print(f"verification failed: {len(got - expected)} unexpected, "
                  f"{len(expected - got)} missing, {len(result.log.duplicates())} duplicated",
                  file=sys.stderr)
            return EXIT_FAIL
        print(f"verified {len(got)} deliveries", file=sys.stderr)
    return EXIT_OK


async def _controller(args) -> int:
    from .net import ControllerDaemon
    host, port = _split(args.listen)
    cfg = ControllerConfig(strategy=args.control_routing, forwarding=args.forwarding,
                           heartbeat_period=args.heartbeat, max_degree=args.max_degree)
    d = ControllerDaemon(cfg)
    try:
        addr = await d.start(host, port)
    except OSError as e:
        print(f"sdps: cannot listen on {args.listen}: {e}", file=sys.stderr)
        return EXIT_CONNECT
    print(f"controller {addr}", flush=True)
    await asyncio.Event().wait()
    return EXIT_OK


async def _broker(args) -> int:
    from .net import BrokerDaemon, ConnectError
    host, port = _split(args.listen)
    d = BrokerDaemon(args.controller, host, port, attempts=args.retries)
    try:
        bid = await d.start()
    except (ConnectError, OSError) as e:
        print(f"sdps: {e}", file=sys.stderr)
        return EXIT_CONNECT
    print(f"broker {bid}", flush=True)
    await asyncio.Event().wait()
    return EXIT_OK


async def _client(args) -> int:
    from .net import ClientRunner, ConnectError
    role = ROLE_ALIASES[args.as_role if args.role == "meta" else args.role]
    try:
        ads = [parse_filter(f) for f in args.advertise]
        subs = [parse_filter(f) for f in args.subscribe]
        pubs = [parse_publication(p) for p in args.publish]
        meta = parse_publication(args.meta) if args.meta else None
        hint = NodeId.parse(args.hint) if args.hint else None
        policies = []
        if args.policy:
            with open(args.policy) as fh:
                policies = parse_policies(fh.read())
    except (ParseError, PolicyError, ValueError, OSError) as e:
        raise UsageError(str(e))

    r = ClientRunner(args.controller, role, args.mode, hint=hint)
    try:
        cid = await r.start()
    except (ConnectError, OSError) as e:
        print(f"sdps: {e}", file=sys.stderr)
        return EXIT_CONNECT
    print(f"client {cid} at {r.client.edge}", file=sys.stderr, flush=True)
    for f in ads:
        r.do("advertise", f)
    for f in subs:
        r.do("subscribe", f)
    if meta is not None:
        r.do("set_metadata", meta)
    for pol in policies:
        r.do("install_policy", pol)
    await r.drain()
    if pubs and (ads or meta is not None or policies):
        # routing state has to propagate before publications can follow it
        await asyncio.sleep(args.settle)
    for p in pubs:
        r.do("publish", p)
    await r.drain()

    loop = asyncio.get_running_loop()
    shown = 0
    deadline = None if args.count else loop.time() + args.wait
    while True:
        for d in r.client.deliveries[shown:]:
            print(f"{d.pub_id} {d.sub_id} {d.publication}", flush=True)
        shown = len(r.client.deliveries)
        if args.count and shown >= args.count:
            break
        if deadline is not None and loop.time() >= deadline:
            break
        r.delivered.clear()
        try:
            await asyncio.wait_for(r.delivered.wait(), 0.05)
        except asyncio.TimeoutError:
            pass
    for t, mid, body in r.client.feedback:
        print(f"feedback {mid} {body}", file=sys.stderr)
    for err in r.client.errors:
        print(f"error {err}", file=sys.stderr)
    await r.close()
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("SDPS_LOG", "WARNING").upper()
    logging.basicConfig(level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "sim":
            return cmd_sim(args)
        runner = {"controller": _controller, "broker": _broker, "client": _client}[args.command]
        return asyncio.run(runner(args))
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
