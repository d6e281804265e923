"""Topology-free reference model of what clients should observe."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .matching import AD, SUB, Entry
from .model import MessageId, NodeId, format_filter, match_filter
from .policy import (
    Insert,
    Metadata,
    PolicyError,
    PolicyStore,
    PublicationPolicy,
    Retract,
    apply_publication_policies,
    execute_actions,
)
from .routing import StrategyConfig, supports_policy

ORACLE_ID = NodeId("broker", 0)


@dataclass
class OracleResult:
    deliveries: set = field(default_factory=set)
    feedback: set = field(default_factory=set)
    dropped: set = field(default_factory=set)
    generated: set = field(default_factory=set)
    entries: set = field(default_factory=set)
    firings: Counter = field(default_factory=Counter)
    pub_times: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)


@dataclass
class _Client:
    alias: str
    id: NodeId
    mode: str
    departed: bool = False
    version: int = 0
    meta: Metadata | None = None


class _Replay:
    def __init__(self, strategy: StrategyConfig, forwarding: str):
        self.cfg = strategy
        self.forwarding = forwarding
        self.entries: dict[MessageId, Entry] = {}
        self.clients: dict[str, _Client] = {}
        self.by_id: dict[NodeId, _Client] = {}
        self.applied: dict[tuple, int] = {}
        self.store = PolicyStore(entries_of=self.entries_of)
        self.counter = 0
        self.seq = 0
        self.n_pubs = 0
        self.result = OracleResult()

    def next_id(self, source: NodeId) -> MessageId:
        self.seq += 1
        return MessageId(source, self.seq)

    def entries_of(self, c: NodeId, kind: str | None = None) -> list[Entry]:
        return sorted((e for e in self.entries.values()
                       if e.source == c and (kind is None or e.kind == kind)), key=lambda e: e.id)

    def live(self, alias: str) -> _Client | None:
        c = self.clients.get(alias)
        return None if c is None or c.departed else c

    def apply(self, firings) -> None:
        for f in firings:
            c = self.by_id.get(f.metadata.client)
            self.result.firings.update([f.key] if f.fire else [])
            if c is None or c.departed:
                continue
            key = (f.policy.id, c.id)
            last = self.applied.get(key)
            if f.fire:
                if last is not None and f.metadata.version <= last:
                    continue
                self.applied[key] = f.metadata.version
            else:
                if last is not None and f.metadata.version < last:
                    continue
                self.applied.pop(key, None)
            kind = f.policy.entry_kind
            ops = execute_actions(f.policy.id, f.policy.actions if f.fire else (), c.id,
                                  f.metadata.attrs, self.entries_of(c.id, kind))
            for op in ops:
                if isinstance(op, Retract):
                    self.entries.pop(op.entry_id, None)
                elif isinstance(op, Insert):
                    i = self.next_id(ORACLE_ID)
                    self.entries[i] = Entry(i, c.id, kind, op.filter, key)

    def step(self, ev) -> None:
        a, args = ev.action, ev.args
        if a == "join-broker":
            self.counter += 1
        elif a == "join-client":
            self.counter += 1
            role, mode = args[0], args[1]
            c = _Client(f"c{len(self.clients) + 1}", NodeId(role, self.counter), mode)
            self.clients[c.alias] = c
            self.by_id[c.id] = c
        elif a == "publish":
            idx = self.n_pubs
            self.n_pubs += 1
            self.result.pub_times[idx] = ev.time
            c = self.live(args[0])
            if c is not None:
                self.publish(c, args[1], idx)
        elif a in ("advertise", "subscribe"):
            c = self.live(args[0])
            if c is not None:
                i = self.next_id(c.id)
                self.entries[i] = Entry(i, c.id, AD if a == "advertise" else SUB, args[1])
        elif a in ("unadvertise", "unsubscribe"):
            c = self.live(args[0])
            if c is not None:
                kind = AD if a == "unadvertise" else SUB
                for e in self.entries_of(c.id, kind):
                    if e.origin is None and e.filter == args[1]:
                        del self.entries[e.id]
        elif a == "metadata":
            c = self.live(args[0])
            if c is not None:
                c.version += 1
                c.meta = Metadata(c.id, args[1], c.version, c.id.role)
                self.apply(self.store.update_metadata(c.meta))
        elif a == "install-policy":
            c = self.live(args[0])
            if c is not None:
                self.install(c, args[1])
        elif a == "remove-policy":
            c = self.live(args[0])
            if c is None:
                return
            pid = args[1]
            pol = self.store.policies.get(pid)
            if pol is not None and pol.owner == c.id:
                self.apply(self.store.remove_policy(pid))
            pp = self.store.pub_policies.get(pid)
            if pp is not None and pp.owner == c.id:
                self.store.remove_pub_policy(pid)
        elif a == "depart-client":
            c = self.live(args[0])
            if c is not None:
                c.departed = True
                for e in self.entries_of(c.id):
                    del self.entries[e.id]

    def install(self, c: _Client, pol) -> None:
        try:
            if pol.owner is None:
                pol = pol.with_owner(c.id)
        except PolicyError as e:
            self.result.rejected.append((c.alias, pol.id, str(e)))
            return
        if pol.owner != c.id:
            self.result.rejected.append((c.alias, pol.id, "owner mismatch"))
            return
        try:
            if isinstance(pol, PublicationPolicy):
                self.store.install_pub_policy(pol)
                return
            if not supports_policy(self.cfg, pol, self.forwarding):
                self.result.rejected.append((c.alias, pol.id, "unsupported state condition"))
                return
            self.apply(self.store.install_policy(pol))
        except PolicyError as e:
            self.result.rejected.append((c.alias, pol.id, str(e)))

    def publish(self, c: _Client, p, idx: int) -> None:
        md = c.meta.attrs if c.meta is not None else None
        p = apply_publication_policies(self.store.pub_policies.values(), p, md)
        if not any(match_filter(e.filter, p) for e in self.entries_of(c.id, AD)):
            (self.result.feedback if c.mode == "feedback" else self.result.dropped).add((c.alias, idx))
            return
        hit = {e.source for e in self.entries.values() if e.kind == SUB and match_filter(e.filter, p)}
        for s in hit:
            self.result.deliveries.add((self.by_id[s].alias, idx))


def oracle_deliveries(events, strategy: StrategyConfig | str | None = None,
                      forwarding: str = "adv") -> OracleResult:
    """Replay client-visible operations directly, ignoring the overlay.

    Policy firings are computed by direct evaluation at the time of each
    metadata or policy event. ``strategy`` and ``forwarding`` only decide
    which policies are rejected at install time, mirroring the brokers.
    """
    if strategy is None or isinstance(strategy, str):
        strategy = StrategyConfig(strategy) if strategy else StrategyConfig()
    r = _Replay(strategy, forwarding)
    for ev in sorted(events, key=lambda e: e.time):
        r.step(ev)
    res = r.result
    for e in r.entries.values():
        key = entry_key(r.by_id[e.source].alias, e)
        res.entries.add(key)
        if e.origin is not None:
            res.generated.add(key)
    return res


def entry_key(alias: str, e: Entry) -> tuple:
    """Topology-independent identity of a live entry: (client, kind, filter, policy)."""
    return (alias, e.kind, format_filter(e.filter) if len(e.filter) else "*",
            e.origin[0] if e.origin else None)
