"""Logically centralized controller: ids, placement, heartbeats, repair, migration."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .model import CLIENT_ROLES, CONTROLLER_ID, MessageId, NodeId
from .routing import POLICY_FLOOD, StrategyConfig
from .wire import Message

log = logging.getLogger(__name__)


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    heartbeat_period: float = 10
    failure_multiplier: float = 3
    max_degree: int = 4
    congestion_threshold: float = 1000.0
    stats_window: int = 5
    repair_settle: float = 20
    strategy: str = POLICY_FLOOD
    forwarding: str = "adv"

    def __post_init__(self):
        for name in ("heartbeat_period", "failure_multiplier", "max_degree",
                     "congestion_threshold", "stats_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.repair_settle < 0:
            raise ValueError("repair_settle must be non-negative")


@dataclass(frozen=True)
class Command:
    """A control command for ``target``, to be sent after ``delay`` time units."""

    target: NodeId
    op: str
    args: dict = field(default_factory=dict)
    delay: float = 0

    def body(self) -> dict:
        return {"op": self.op, **self.args}


@dataclass
class BrokerRecord:
    neighbors: set = field(default_factory=set)
    clients: set = field(default_factory=set)
    last_heartbeat: float = 0
    window: deque = field(default_factory=deque)
    client_entries: dict = field(default_factory=dict)


class TopologyStore:
    def __init__(self):
        self.brokers: dict[NodeId, BrokerRecord] = {}
        self.clients: dict[NodeId, NodeId] = {}
        self.counter = 0
        self.rendezvous: Optional[NodeId] = None

    def next_num(self) -> int:
        self.counter += 1
        return self.counter

    def broker_ids(self) -> list[NodeId]:
        return sorted(self.brokers)

    def edge_of(self, client: NodeId) -> Optional[NodeId]:
        return self.clients.get(client)

    def degree(self, b: NodeId) -> int:
        return len(self.brokers[b].neighbors)

    def edges(self) -> set:
        return {tuple(sorted((a, b))) for a, r in self.brokers.items() for b in r.neighbors}

    def link(self, a: NodeId, b: NodeId) -> None:
        self.brokers[a].neighbors.add(b)
        self.brokers[b].neighbors.add(a)

    def components(self) -> list[list[NodeId]]:
        seen, out = set(), []
        for b in self.broker_ids():
            if b in seen:
                continue
            comp, stack = [], [b]
            seen.add(b)
            while stack:
                x = stack.pop()
                comp.append(x)
                for n in self.brokers[x].neighbors:
                    if n not in seen:
                        seen.add(n)
                        stack.append(n)
            out.append(sorted(comp))
        return out

    def is_tree(self) -> bool:
        n = len(self.brokers)
        return n == 0 or (len(self.edges()) == n - 1 and len(self.components()) == 1)

    def next_hops(self, src: NodeId) -> dict[NodeId, NodeId]:
        """First hop from ``src`` toward every other reachable broker."""
        table: dict[NodeId, NodeId] = {}
        frontier = [(n, n) for n in sorted(self.brokers[src].neighbors)]
        seen = {src}
        while frontier:
            nxt = []
            for node, first in frontier:
                if node in seen:
                    continue
                seen.add(node)
                table[node] = first
                nxt.extend((n, first) for n in sorted(self.brokers[node].neighbors))
            frontier = nxt
        return table


class Controller:
    def __init__(self, config: ControllerConfig | None = None):
        self.config = config or ControllerConfig()
        self.topology = TopologyStore()
        self.failed: set = set()
        self.addrs: dict[NodeId, str] = {}
        self._seq = 0

    # -- bootstrap ------------------------------------------------------------------

    def place_node(self, kind: str, hint: NodeId | None = None, exclude=()) -> Optional[NodeId]:
        ts = self.topology
        if kind == "broker":
            cand = [b for b in ts.broker_ids() if ts.degree(b) < self.config.max_degree]
            if not ts.brokers:
                return None
            if not cand:
                raise PlacementError("every broker is at maximum degree")
            return min(cand, key=lambda b: (ts.degree(b), b))
        if hint is not None and hint in ts.brokers and hint not in exclude:
            return hint
        cand = [b for b in ts.broker_ids() if b not in exclude] or ts.broker_ids()
        if not cand:
            raise PlacementError("no broker available for client")
        return min(cand, key=lambda b: (len(ts.brokers[b].clients), b))

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(self.config.strategy, self.topology.rendezvous)

    def bootstrap(self, role: str, now: float = 0, *, hint: NodeId | None = None,
                  exclude=(), id: NodeId | None = None,
                  addr: str | None = None) -> tuple[dict, list[Command]]:
        """Admit a node. Returns the bootstrap response and commands for existing brokers.

        A re-bootstrapping client passes its previous ``id`` and keeps it.
        ``addr`` is where a broker accepts connections (daemon mode only).
        """
        ts = self.topology
        if role == "broker":
            parent = self.place_node("broker")
            b = NodeId("broker", ts.next_num())
            ts.brokers[b] = BrokerRecord(last_heartbeat=now)
            if addr:
                self.addrs[b] = addr
            if parent is None:
                ts.rendezvous = b
            else:
                ts.link(b, parent)
            cmds = []
            if parent is not None:
                cmds.append(Command(parent, "add-neighbor", self._peer(b)))
            cmds.extend(self._next_hop_commands(skip=b))
            resp = {
                "id": str(b),
                "neighbors": [str(n) for n in sorted(ts.brokers[b].neighbors)],
                "next_hops": {str(k): str(v) for k, v in ts.next_hops(b).items()},
                "rendezvous": str(ts.rendezvous),
                "strategy": self.config.strategy,
                "forwarding": self.config.forwarding,
                "heartbeat_period": self.config.heartbeat_period,
            }
            if self.addrs:
                resp["addrs"] = {str(n): self.addrs[n] for n in ts.brokers[b].neighbors if n in self.addrs}
            log.info("broker %s joined under %s", b, parent)
            return resp, cmds
        if role not in CLIENT_ROLES:
            raise ValueError(f"unknown role {role!r}")
        edge = self.place_node(role, hint, exclude)
        if id is not None:
            if id.role != role:
                raise ValueError(f"id {id} does not carry role {role}")
            old = ts.clients.get(id)
            if old in ts.brokers:
                ts.brokers[old].clients.discard(id)
            c = id
        else:
            c = NodeId(role, ts.next_num())
        ts.clients[c] = edge
        ts.brokers[edge].clients.add(c)
        resp = {"id": str(c), "edge": str(edge)}
        if edge in self.addrs:
            resp["addr"] = self.addrs[edge]
        return resp, []

    def _peer(self, b: NodeId) -> dict:
        args = {"neighbor": str(b)}
        if b in self.addrs:
            args["addr"] = self.addrs[b]
        return args

    def depart(self, client: NodeId) -> None:
        edge = self.topology.clients.pop(client, None)
        if edge in self.topology.brokers:
            self.topology.brokers[edge].clients.discard(client)

    def _next_hop_commands(self, skip=None, delay: float = 0) -> list[Command]:
        ts = self.topology
        return [
            Command(b, "next-hops", {"table": {str(k): str(v) for k, v in ts.next_hops(b).items()}}, delay)
            for b in ts.broker_ids() if b != skip
        ]

    # -- monitoring -----------------------------------------------------------------

    def record_heartbeat(self, b: NodeId, stats: dict, now: float) -> None:
        rec = self.topology.brokers.get(b)
        if rec is None:
            log.warning("heartbeat from unknown broker %s ignored", b)
            return
        rec.last_heartbeat = now
        counts = {k: int(v) for k, v in (stats.get("counts") or {}).items()}
        rec.window.append((now, counts))
        while len(rec.window) > self.config.stats_window:
            rec.window.popleft()
        if "clients" in stats:
            rec.client_entries = {NodeId.parse(k): int(v) for k, v in stats["clients"].items()}

    def rate(self, b: NodeId) -> float:
        w = self.topology.brokers[b].window
        if not w:
            return 0.0
        total = sum(sum(counts.values()) for _, counts in w)
        return total / (len(w) * self.config.heartbeat_period)

    def detect_failures(self, now: float) -> set:
        limit = self.config.failure_multiplier * self.config.heartbeat_period
        return {b for b, r in self.topology.brokers.items() if now - r.last_heartbeat > limit}

    def detect_congestion(self) -> set:
        return {b for b in self.topology.brokers if self.rate(b) > self.config.congestion_threshold}

    # -- repair ---------------------------------------------------------------------

    def plan_repair(self, failed) -> list[Command]:
        """Drop ``failed`` brokers and reconnect the survivors into one tree.

        Neighbors of a failed broker first drop the dead link; after
        ``repair_settle`` the new edges, next-hop tables and, when needed, the
        new rendezvous broker are installed.
        """
        ts = self.topology
        failed = {b for b in failed if b in ts.brokers}
        if not failed:
            return []
        phase1 = []
        orphans = []
        for b in sorted(failed):
            rec = ts.brokers.pop(b)
            self.failed.add(b)
            for n in sorted(rec.neighbors):
                if n in ts.brokers:
                    ts.brokers[n].neighbors.discard(b)
                    phase1.append(Command(n, "remove-neighbor", {"neighbor": str(b)}))
            for c in rec.clients:
                if ts.clients.get(c) == b:
                    del ts.clients[c]
                    orphans.append(c)
        if not ts.brokers:
            ts.rendezvous = None
            log.error("no surviving broker; overlay is empty")
            return phase1
        settle = self.config.repair_settle
        phase2 = []
        comps = ts.components()
        root_lost = ts.rendezvous not in ts.brokers
        if root_lost:
            ts.rendezvous = min(ts.brokers)
        main = next(c for c in comps if ts.rendezvous in c)
        attached = set(main)
        for comp in comps:
            if comp is main:
                continue
            orphan_root = comp[0]
            cand = [b for b in sorted(attached) if ts.degree(b) < self.config.max_degree]
            if not cand:
                # a disconnected tree is worse than exceeding the degree bound
                cand = sorted(attached)
            parent = min(cand, key=lambda b: (ts.degree(b), b))
            ts.link(orphan_root, parent)
            phase2.append(Command(orphan_root, "add-neighbor", self._peer(parent), settle))
            phase2.append(Command(parent, "add-neighbor", self._peer(orphan_root), settle))
            attached.update(comp)
        phase2.extend(self._next_hop_commands(delay=settle))
        if root_lost:
            phase2.extend(
                Command(b, "set-rendezvous", {"broker": str(ts.rendezvous)}, settle)
                for b in ts.broker_ids()
            )
        log.info("repair of %s: %d orphaned clients", sorted(failed), len(orphans))
        return phase1 + phase2

    # -- migration ------------------------------------------------------------------

    def plan_migration(self, congested: NodeId) -> list[Command]:
        ts = self.topology
        if congested not in ts.brokers:
            return []
        load = self.rate(congested)
        others = [b for b in ts.broker_ids() if b != congested]
        if not others:
            return []
        target = min(others, key=lambda b: (self.rate(b), b))
        if not self.rate(target) < load:
            return []
        rec = ts.brokers[congested]
        movable = [c for c in rec.clients if c.role in ("producer", "consumer")]
        if not movable:
            return []
        n = math.ceil(len(movable) / 2)
        chosen = sorted(movable, key=lambda c: (rec.client_entries.get(c, 0), c))[:n]
        for c in chosen:
            rec.clients.discard(c)
            ts.brokers[target].clients.add(c)
            ts.clients[c] = target
        args = {"clients": [str(c) for c in chosen], "to": str(target)}
        if target in self.addrs:
            args["addr"] = self.addrs[target]
        return [Command(congested, "migrate-clients", args)]

    # -- periodic sweep -------------------------------------------------------------

    def tick(self, now: float) -> list[Command]:
        cmds = []
        failed = self.detect_failures(now)
        if failed:
            cmds.extend(self.plan_repair(failed))
        for b in sorted(self.detect_congestion()):
            cmds.extend(self.plan_migration(b))
        return cmds

    # -- message interface ----------------------------------------------------------

    def next_id(self) -> MessageId:
        self._seq += 1
        return MessageId(CONTROLLER_ID, self._seq)

    def command_message(self, cmd: Command) -> Message:
        return Message("CMD", self.next_id(), CONTROLLER_ID, cmd.body())

    def handle(self, msg: Message, now: float) -> tuple[list, list[Command]]:
        """Process a message addressed to the controller.

        Returns direct replies as ``(node, message)`` pairs plus commands.
        """
        frm = msg.sender
        if msg.type == "BOOT":
            body = msg.body
            role = body.get("role")
            try:
                hint = NodeId.parse(body["hint"]) if body.get("hint") else None
                exclude = tuple(NodeId.parse(x) for x in body.get("exclude", ()))
                prev = NodeId.parse(body["id"]) if body.get("id") else None
                resp, cmds = self.bootstrap(role, now, hint=hint, exclude=exclude, id=prev,
                                            addr=body.get("addr"))
            except (PlacementError, ValueError) as e:
                return [(frm, Message("ERR", self.next_id(), CONTROLLER_ID, {"error": str(e)}))], []
            if "nonce" in body:
                resp["nonce"] = body["nonce"]
            return [(frm, Message("BOOTACK", self.next_id(), CONTROLLER_ID, resp))], cmds
        if msg.type == "HB":
            self.record_heartbeat(frm, msg.body, now)
            return [], []
        if msg.type == "BYE":
            self.depart(frm)
            return [], []
        if msg.type == "ERR":
            log.warning("error report from %s: %s", frm, msg.body.get("error"))
            return [], []
        return [], []
