"""TCP daemons for the controller, brokers and clients.

The state machines are the ones the simulator drives; this module only moves
encoded lines between sockets and each machine's single inbox.

A connection's first line identifies the peer: ``BOOT`` toward the
controller, ``HELLO`` between brokers and ``ATTACH`` from a client to its edge.
Between two brokers the one with the higher id dials.
"""
from __future__ import annotations

import asyncio
import logging
from typing import Optional

from .broker import Broker
from .client import Client
from .controller import Controller, ControllerConfig
from .model import CONTROLLER_ID, MessageId, NodeId
from .routing import StrategyConfig
from .wire import Message, WireError, decode_message, encode_message

log = logging.getLogger(__name__)


class ConnectError(OSError):
    pass


def split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {addr!r}")
    return host, int(port)


async def open_with_retry(addr: str, attempts: int = 5, delay: float = 0.2):
    host, port = split_addr(addr)
    last = None
    for i in range(attempts):
        try:
            return await asyncio.open_connection(host, port)
        except OSError as e:
            last = e
            await asyncio.sleep(delay * (2 ** i))
    raise ConnectError(f"cannot reach {addr}: {last}")


class Link:
    """One peer connection with serialized writes."""

    def __init__(self, reader, writer, peer: Optional[NodeId] = None):
        self.reader = reader
        self.writer = writer
        self.peer = peer

    def send(self, msg: Message) -> None:
        if self.writer.is_closing():
            return
        self.writer.write(encode_message(msg))

    async def recv(self) -> Optional[Message]:
        """Next message, or None at end of stream. Undecodable lines are skipped."""
        while True:
            try:
                line = await self.reader.readline()
            except (ConnectionError, asyncio.IncompleteReadError):
                return None
            if not line:
                return None
            try:
                return decode_message(line)
            except WireError as e:
                log.warning("bad line from %s: %s", self.peer, e)
                self.send(Message("ERR", MessageId(CONTROLLER_ID, 0), CONTROLLER_ID, {"error": str(e)}))

    def close(self) -> None:
        if not self.writer.is_closing():
            self.writer.close()


# -- controller ----------------------------------------------------------------------

class ControllerDaemon:
    def __init__(self, config: ControllerConfig | None = None):
        self.controller = Controller(config)
        self.links: dict[NodeId, Link] = {}
        self.server = None
        self.addr = None
        self._tasks: set = set()
        self._t0 = 0.0

    def now(self) -> float:
        return asyncio.get_running_loop().time() - self._t0

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> str:
        self._t0 = asyncio.get_running_loop().time()
        self.server = await asyncio.start_server(self._serve, host, port)
        h, p = self.server.sockets[0].getsockname()[:2]
        self.addr = f"{h}:{p}"
        self._spawn(self._sweep())
        log.info("controller listening on %s", self.addr)
        return self.addr

    def _spawn(self, coro) -> None:
        t = asyncio.ensure_future(coro)
        self._tasks.add(t)
        t.add_done_callback(self._tasks.discard)

    async def _serve(self, reader, writer) -> None:
        link = Link(reader, writer)
        while True:
            msg = await link.recv()
            if msg is None:
                break
            replies, cmds = self.controller.handle(msg, self.now())
            for to, m in replies:
                link.send(m)
                if m.type == "BOOTACK":
                    node = NodeId.parse(m.body["id"])
                    link.peer = node
                    if node.is_broker:
                        self.links[node] = link
            self._dispatch(cmds)
        link.close()

    def _dispatch(self, cmds) -> None:
        loop = asyncio.get_running_loop()
        for cmd in cmds:
            m = self.controller.command_message(cmd)
            if cmd.delay:
                loop.call_later(cmd.delay, self._push, cmd.target, m)
            else:
                self._push(cmd.target, m)

    def _push(self, target: NodeId, m: Message) -> None:
        link = self.links.get(target)
        if link is not None:
            link.send(m)

    async def _sweep(self) -> None:
        period = self.controller.config.heartbeat_period
        while True:
            await asyncio.sleep(period)
            cmds = self.controller.tick(self.now())
            for b in self.controller.failed:
                link = self.links.pop(b, None)
                if link is not None:
                    link.close()
            self._dispatch(cmds)

    async def stop(self) -> None:
        for t in list(self._tasks):
            t.cancel()
        for link in self.links.values():
            link.close()
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()


# -- broker --------------------------------------------------------------------------

class BrokerDaemon:
    def __init__(self, controller_addr: str, host: str = "127.0.0.1", port: int = 0,
                 attempts: int = 5, retry_delay: float = 0.2):
        self.controller_addr = controller_addr
        self.host, self.port = host, port
        self.attempts, self.retry_delay = attempts, retry_delay
        self.broker: Optional[Broker] = None
        self.links: dict[NodeId, Link] = {}
        self.pending: dict[NodeId, list] = {}
        self.addrs: dict[NodeId, str] = {}
        self.inbox: asyncio.Queue = asyncio.Queue()
        self.control: Optional[Link] = None
        self.server = None
        self._tasks: set = set()
        self.heartbeat_period = 1.0

    def _spawn(self, coro) -> None:
        t = asyncio.ensure_future(coro)
        self._tasks.add(t)
        t.add_done_callback(self._tasks.discard)

    async def start(self) -> NodeId:
        self.server = await asyncio.start_server(self._accept, self.host, self.port)
        h, p = self.server.sockets[0].getsockname()[:2]
        reader, writer = await open_with_retry(self.controller_addr, self.attempts, self.retry_delay)
        self.control = Link(reader, writer, CONTROLLER_ID)
        temp = NodeId("broker", 0)
        self.control.send(Message("BOOT", MessageId(temp, 0), temp, {"role": "broker", "addr": f"{h}:{p}"}))
        ack = await self.control.recv()
        if ack is None or ack.type != "BOOTACK":
            raise ConnectError(f"bootstrap refused: {ack.body if ack else 'connection closed'}")
        body = ack.body
        bid = NodeId.parse(body["id"])
        self.broker = Broker(
            bid,
            forwarding=body["forwarding"],
            control=StrategyConfig(body["strategy"], NodeId.parse(body["rendezvous"])),
            neighbors=[NodeId.parse(n) for n in body["neighbors"]],
            next_hop={NodeId.parse(k): NodeId.parse(v) for k, v in body["next_hops"].items()},
        )
        self.heartbeat_period = float(body.get("heartbeat_period", 1.0))
        for n, a in body.get("addrs", {}).items():
            self.addrs[NodeId.parse(n)] = a
        for n in sorted(self.broker.neighbors):
            await self._dial(n)
        self._spawn(self._read(self.control))
        self._spawn(self._run())
        self._spawn(self._heartbeat())
        log.info("broker %s up on %s:%s", bid, h, p)
        return bid

    async def _dial(self, n: NodeId) -> None:
        if n in self.links or n not in self.addrs or not self.broker.id > n:
            return
        try:
            reader, writer = await open_with_retry(self.addrs[n], 3, 0.1)
        except ConnectError as e:
            log.warning("%s", e)
            return
        link = Link(reader, writer, n)
        link.send(Message("HELLO", self.broker.next_id(), self.broker.id, {}))
        self._register(n, link)
        self._spawn(self._read(link))

    def _register(self, peer: NodeId, link: Link) -> None:
        self.links[peer] = link
        for m in self.pending.pop(peer, []):
            link.send(m)

    async def _accept(self, reader, writer) -> None:
        link = Link(reader, writer)
        first = await link.recv()
        if first is None:
            link.close()
            return
        link.peer = first.sender
        self._register(first.sender, link)
        if first.type != "HELLO":
            await self.inbox.put((first, first.sender))
        await self._read(link)

    async def _read(self, link: Link) -> None:
        while True:
            msg = await link.recv()
            if msg is None:
                break
            await self.inbox.put((msg, link.peer))
        if self.links.get(link.peer) is link:
            del self.links[link.peer]
        link.close()

    async def _run(self) -> None:
        b = self.broker
        while True:
            msg, frm = await self.inbox.get()
            if msg.type == "CMD":
                cmd = msg.body
                if cmd.get("addr") and cmd.get("neighbor"):
                    self.addrs[NodeId.parse(cmd["neighbor"])] = cmd["addr"]
                if cmd.get("op") == "remove-neighbor":
                    link = self.links.pop(NodeId.parse(cmd["neighbor"]), None)
                    if link is not None:
                        link.close()
            out = b.handle(msg, frm)
            if msg.type == "CMD" and msg.body.get("op") == "add-neighbor":
                await self._dial(NodeId.parse(msg.body["neighbor"]))
            for hop, m in out:
                self._send(hop, m)

    def _send(self, hop: NodeId, m: Message) -> None:
        if hop == CONTROLLER_ID:
            self.control.send(m)
        elif hop in self.links:
            self.links[hop].send(m)
        elif hop.is_broker and hop in self.broker.neighbors:
            self.pending.setdefault(hop, []).append(m)
        else:
            log.info("%s: no link to %s, dropping %s", self.broker.id, hop, m.type)

    async def _heartbeat(self) -> None:
        while True:
            await asyncio.sleep(self.heartbeat_period)
            self.control.send(self.broker.heartbeat())

    async def stop(self) -> None:
        for t in list(self._tasks):
            t.cancel()
        for link in list(self.links.values()):
            link.close()
        if self.control is not None:
            self.control.close()
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()


# -- client --------------------------------------------------------------------------

class ClientRunner:
    """Drives a :class:`~sdps.client.Client` over TCP."""

    def __init__(self, controller_addr: str, role: str, mode: str = "drop",
                 hint: NodeId | None = None, timeout: float = 0.5, attempts: int = 5):
        self.controller_addr = controller_addr
        self.client = Client(role, mode, hint=hint)
        self.timeout = timeout
        self.attempts = attempts
        self.edge: Optional[Link] = None
        self.delivered = asyncio.Event()
        self._reader = None
        self._closed = False

    async def _boot(self, exclude=()) -> dict:
        reader, writer = await open_with_retry(self.controller_addr, self.attempts)
        link = Link(reader, writer, CONTROLLER_ID)
        link.send(self.client.boot_request(exclude=exclude))
        ack = await link.recv()
        link.close()
        if ack is None or ack.type != "BOOTACK":
            raise ConnectError(f"bootstrap refused: {ack.body if ack else 'connection closed'}")
        return ack.body

    async def start(self) -> NodeId:
        body = await self._boot()
        self.client.id = NodeId.parse(body["id"])
        await self._connect(body["addr"])
        self._flush(self.client.on_bootack(body))
        return self.client.id

    async def _connect(self, addr: str) -> None:
        reader, writer = await open_with_retry(addr, self.attempts)
        if self.edge is not None:
            self.edge.close()
        self.edge = Link(reader, writer)
        self._reader = asyncio.ensure_future(self._read(self.edge))

    def _flush(self, out) -> None:
        for dest, m in out:
            if dest == CONTROLLER_ID:
                asyncio.ensure_future(self._to_controller(m))
            elif self.edge is not None:
                self.edge.send(m)

    async def _to_controller(self, m: Message) -> None:
        try:
            reader, writer = await open_with_retry(self.controller_addr, 1)
        except ConnectError:
            return
        writer.write(encode_message(m))
        await writer.drain()
        writer.close()

    async def _read(self, link: Link) -> None:
        while True:
            msg = await link.recv()
            if msg is None:
                break
            if msg.type == "MIGRATE":
                link = await self._migrate(msg)
                continue
            self._flush(self.client.receive(msg, asyncio.get_running_loop().time()))
            if msg.type == "DELIVER":
                self.delivered.set()
        if link is self.edge and not self._closed:
            # edge broker went away: wait, then bootstrap again elsewhere
            self.client.lost_edge()
            await asyncio.sleep(self.timeout)
            await self._rebootstrap()

    async def _migrate(self, msg: Message) -> Link:
        old = self.edge
        reader, writer = await open_with_retry(msg.body["addr"], self.attempts)
        self.edge = Link(reader, writer)
        self._flush(self.client.receive(msg))
        old.close()
        return self.edge

    async def _rebootstrap(self) -> None:
        dead = self.client.edge
        for _ in range(self.attempts):
            try:
                body = await self._boot(exclude=[dead] if dead else ())
                await self._connect(body["addr"])
                self._flush(self.client.attach(NodeId.parse(body["edge"])))
                return
            except (ConnectError, KeyError):
                await asyncio.sleep(self.timeout)

    def do(self, op: str, *args) -> None:
        self._flush(getattr(self.client, op)(*args))

    async def drain(self) -> None:
        if self.edge is not None and not self.edge.writer.is_closing():
            await self.edge.writer.drain()

    async def close(self) -> None:
        self._closed = True
        self.do("depart")
        await asyncio.sleep(0)
        if self.edge is not None:
            await self.drain()
            self.edge.close()
        if self._reader is not None:
            self._reader.cancel()


# -- scenario replay over localhost --------------------------------------------------

class LiveHarness:
    """Replays a scenario against real daemons on localhost.

    One scenario tick lasts ``tick`` seconds. Events sharing a tick run in file
    order. The result mirrors the simulator's delivered set so the two can be
    compared directly.
    """

    def __init__(self, events, strategy: str = "metadata-flood", forwarding: str = "adv",
                 tick: float = 0.01, settle: float = 0.5):
        self.events = sorted(events, key=lambda e: e.time)
        self.config = ControllerConfig(strategy=strategy, forwarding=forwarding,
                                       heartbeat_period=10 * tick)
        self.tick = tick
        self.settle = settle
        self.controller: Optional[ControllerDaemon] = None
        self.brokers: list[BrokerDaemon] = []
        self.clients: dict[str, ClientRunner] = {}
        self.pub_times: dict[int, float] = {}
        self.n_pubs = 0

    def broker(self, alias: str) -> Optional[BrokerDaemon]:
        k = int(alias[1:]) - 1
        return self.brokers[k] if 0 <= k < len(self.brokers) else None

    async def run(self) -> set:
        self.controller = ControllerDaemon(self.config)
        addr = await self.controller.start()
        loop = asyncio.get_running_loop()
        t0 = loop.time()
        try:
            for ev in self.events:
                delay = t0 + ev.time * self.tick - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                await self._event(ev, addr)
            await asyncio.sleep(self.settle)
        finally:
            await self.stop()
        return self.delivered()

    async def _event(self, ev, addr: str) -> None:
        a, args = ev.action, ev.args
        if a == "join-broker":
            d = BrokerDaemon(addr)
            await d.start()
            self.brokers.append(d)
        elif a == "join-client":
            role, mode, hint = args
            h = self.broker(hint) if hint else None
            r = ClientRunner(addr, role, mode, hint=h.broker.id if h else None)
            self.clients[f"c{len(self.clients) + 1}"] = r
            await r.start()
        elif a == "publish":
            idx = self.n_pubs
            self.n_pubs += 1
            self.pub_times[idx] = ev.time
            self.clients[args[0]].do("publish", args[1], idx)
        elif a in ("advertise", "subscribe", "unadvertise", "unsubscribe"):
            self.clients[args[0]].do(a, args[1])
        elif a == "metadata":
            self.clients[args[0]].do("set_metadata", args[1])
        elif a == "install-policy":
            self.clients[args[0]].do("install_policy", args[1])
        elif a == "remove-policy":
            self.clients[args[0]].do("remove_policy", args[1])
        elif a == "depart-client":
            await self.clients[args[0]].close()
        elif a == "fail-broker":
            await self.broker(args[0]).stop()
        else:
            raise ValueError(f"{a} is not supported in live replay")

    def delivered(self) -> set:
        owner = {r.client.id: alias for alias, r in self.clients.items()}
        out = set()
        for alias, r in self.clients.items():
            for d in r.client.deliveries:
                producer = owner.get(d.pub_id.source)
                idx = self.clients[producer].client.pub_tags.get(d.pub_id) if producer else None
                out.add((alias, idx))
        return out

    def generated(self) -> set:
        """Live policy-generated entries held at each client's edge, keyed like the oracle's."""
        from .oracle import entry_key
        alias_of = {r.client.id: a for a, r in self.clients.items()}
        out = set()
        for d in self.brokers:
            b = d.broker
            for table in (b.art, b.srt):
                for e in table:
                    if e.origin is not None and b.last_hop.get(e.id) == e.source and e.source in b.clients:
                        out.add(entry_key(alias_of[e.source], e))
        return out

    async def stop(self) -> None:
        for r in self.clients.values():
            r._closed = True
            if r._reader is not None:
                r._reader.cancel()
            if r.edge is not None:
                r.edge.close()
        for d in self.brokers:
            await d.stop()
        if self.controller is not None:
            await self.controller.stop()
