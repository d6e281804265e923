"""Metadata, policies and their evaluation.

Policy text::

    POLICY id=7 owner=i4 target=consumer WHEN [meta.zone,present]
        STATE lacks_sub([kind,=,'own']) DO insert_sub [zone,=,$meta.zone]; insert_unsub [zone,=,'old']

    PUBPOLICY id=9 owner=a2 WHEN [meta.country,present] ON [price,>,100] DO set [topic,$meta.country]

``WHEN *`` / ``ON *`` stand for the empty (always true) condition.  Modify
instructions take deltas ``+[attr,op,value]`` (add), ``-attr`` (delete) and
``=[attr,op,value]`` (set)::

    modify [price,present] WITH =[price,<,$old.price+10] +[kind,=,'gen']
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from typing import Optional, Union

from .matching import AD, SUB, Entry, reverse_match
from .model import (
    ORDERING_OPS,
    Filter,
    NodeId,
    ParseError,
    Predicate,
    Publication,
    VarRef,
    _Scanner,
    filters_intersect,
    format_filter,
    format_value,
    match_filter,
)

log = logging.getLogger(__name__)

TARGET_ROLES = ("producer", "consumer")
OWNER_FOR_TARGET = {"producer": "advertiser", "consumer": "interest-manager"}
STATE_KINDS = ("has_sub", "has_ad", "lacks_sub", "lacks_ad")


class PolicyError(ValueError):
    pass


class Unresolved(LookupError):
    """A template variable had no value to substitute."""


@dataclass(frozen=True)
class Metadata:
    client: NodeId
    attrs: Publication
    version: int
    role: str = ""
    edge: Optional[NodeId] = None


@dataclass(frozen=True)
class StateCondition:
    kind: str
    pattern: Filter

    def __post_init__(self):
        if self.kind not in STATE_KINDS:
            raise PolicyError(f"unknown state condition {self.kind!r}")

    @property
    def entry_kind(self) -> str:
        return SUB if self.kind.endswith("_sub") else AD

    def text(self) -> str:
        return f"{self.kind}({_ftext(self.pattern)})"


# -- instructions ----------------------------------------------------------------

@dataclass(frozen=True)
class InsertEntry:
    kind: str
    template: Filter

    def text(self) -> str:
        return f"insert_{self.kind} {_ftext(self.template)}"


@dataclass(frozen=True)
class RetractMatching:
    kind: str
    pattern: Filter

    def text(self) -> str:
        return f"insert_un{self.kind} {_ftext(self.pattern)}"


@dataclass(frozen=True)
class Delta:
    action: str  # add | del | set
    attribute: str
    predicate: Optional[Predicate] = None

    def text(self) -> str:
        if self.action == "del":
            return f"-{self.attribute}"
        return ("+" if self.action == "add" else "=") + self.predicate.text()


@dataclass(frozen=True)
class Modify:
    pattern: Filter
    deltas: tuple

    def text(self) -> str:
        return f"modify {_ftext(self.pattern)} WITH " + " ".join(d.text() for d in self.deltas)


Instruction = Union[InsertEntry, RetractMatching, Modify]


@dataclass(frozen=True)
class Policy:
    id: int
    owner: Optional[NodeId]
    target_role: str
    meta_condition: Filter = Filter()
    state_conditions: tuple = ()
    actions: tuple = ()

    def __post_init__(self):
        if self.target_role not in TARGET_ROLES:
            raise PolicyError(f"bad target role {self.target_role!r}")
        if self.owner is not None and self.owner.role != OWNER_FOR_TARGET[self.target_role]:
            raise PolicyError(
                f"{self.owner.role} {self.owner} cannot own policies targeting {self.target_role}s"
            )
        kind = AD if self.target_role == "producer" else SUB
        for a in self.actions:
            if isinstance(a, (InsertEntry, RetractMatching)) and a.kind != kind:
                raise PolicyError(f"{a.text().split()[0]} does not apply to {self.target_role}s")

    @property
    def entry_kind(self) -> str:
        return AD if self.target_role == "producer" else SUB

    @property
    def uses_sub_state(self) -> bool:
        return any(c.entry_kind == SUB for c in self.state_conditions)

    def with_owner(self, owner: NodeId) -> Policy:
        return Policy(self.id, owner, self.target_role, self.meta_condition,
                      self.state_conditions, self.actions)

    def text(self) -> str:
        parts = [f"POLICY id={self.id}"]
        if self.owner is not None:
            parts.append(f"owner={self.owner}")
        parts.append(f"target={self.target_role}")
        parts.append(f"WHEN {_ftext(self.meta_condition)}")
        parts.extend(f"STATE {c.text()}" for c in self.state_conditions)
        parts.append("DO " + "; ".join(a.text() for a in self.actions))
        return " ".join(parts)


@dataclass(frozen=True)
class PublicationPolicy:
    id: int
    owner: Optional[NodeId]
    meta_condition: Filter = Filter()
    content_condition: Filter = Filter()
    transform: tuple = ()  # ((attr, value-or-VarRef), ...)

    def __post_init__(self):
        attrs = [a for a, _ in self.transform]
        if len(set(attrs)) != len(attrs):
            raise PolicyError("transform attributes must be distinct")
        if self.owner is not None and self.owner.role != "advertiser":
            raise PolicyError("publication policies are owned by advertisers")

    def with_owner(self, owner: NodeId) -> PublicationPolicy:
        return PublicationPolicy(self.id, owner, self.meta_condition,
                                 self.content_condition, self.transform)

    def text(self) -> str:
        parts = [f"PUBPOLICY id={self.id}"]
        if self.owner is not None:
            parts.append(f"owner={self.owner}")
        parts.append(f"WHEN {_ftext(self.meta_condition)}")
        parts.append(f"ON {_ftext(self.content_condition)}")
        parts.append("DO set " + ",".join(f"[{a},{format_value(v)}]" for a, v in self.transform))
        return " ".join(parts)


def _ftext(f: Filter) -> str:
    return format_filter(f) if len(f) else "*"


# -- policy text grammar -----------------------------------------------------------

_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")


class _PolicyScanner(_Scanner):
    def word(self) -> str:
        self.ws()
        m = _WORD.match(self.text, self.pos)
        if not m:
            self.error("expected keyword")
        self.pos = m.end()
        return m.group(0)

    def keyword(self, kw: str):
        save = self.pos
        if self.word() != kw:
            self.pos = save
            self.error(f"expected {kw}")

    def try_keyword(self, kw: str) -> bool:
        save = self.pos
        self.ws()
        m = _WORD.match(self.text, self.pos)
        if m and m.group(0) == kw:
            self.pos = m.end()
            return True
        self.pos = save
        return False

    def field(self, name: str, required: bool = True) -> Optional[str]:
        save = self.pos
        self.ws()
        prefix = name + "="
        if not self.text.startswith(prefix, self.pos):
            if required:
                self.error(f"expected {prefix}")
            self.pos = save
            return None
        self.pos += len(prefix)
        m = re.compile(r"[^\s]+").match(self.text, self.pos)
        if not m:
            self.error(f"empty {name}")
        self.pos = m.end()
        return m.group(0)

    def cond_filter(self) -> Filter:
        if self.peek() == "*":
            self.pos += 1
            return Filter()
        return self.filter()

    def instruction(self) -> Instruction:
        start = self.pos
        name = self.word()
        if name in ("insert_ad", "insert_sub"):
            return InsertEntry(name[len("insert_"):], self.filter())
        if name in ("insert_unad", "insert_unsub"):
            return RetractMatching(name[len("insert_un"):], self.filter())
        if name == "modify":
            pattern = self.filter()
            self.keyword("WITH")
            deltas = []
            while True:
                c = self.peek()
                if c == ",":
                    self.pos += 1
                    c = self.peek()
                if c == "+" or c == "=":
                    self.pos += 1
                    p = self.predicate()
                    deltas.append(Delta("add" if c == "+" else "set", p.attribute, p))
                elif c == "-":
                    self.pos += 1
                    deltas.append(Delta("del", self.attribute()))
                else:
                    break
            if not deltas:
                self.error("modify needs at least one delta")
            return Modify(pattern, tuple(deltas))
        self.pos = start
        self.error(f"unknown instruction {name!r}")


def _parse_header(s: _PolicyScanner):
    pid = s.field("id")
    if not pid.isdigit():
        s.error("policy id must be a non-negative integer")
    owner = s.field("owner", required=False)
    return int(pid), NodeId.parse(owner) if owner else None


def parse_policy(text: str) -> Policy | PublicationPolicy:
    """Parse ``POLICY ...`` or ``PUBPOLICY ...`` text."""
    s = _PolicyScanner(text, allow_vars=True)
    head = s.word()
    try:
        if head == "POLICY":
            pid, owner = _parse_header(s)
            target = s.field("target")
            s.keyword("WHEN")
            s.allow_vars = False
            cond = s.cond_filter()
            states = []
            while s.try_keyword("STATE"):
                kind = s.word()
                s.expect("(")
                states.append(StateCondition(kind, s.cond_filter()))
                s.expect(")")
            s.allow_vars = True
            s.keyword("DO")
            actions = [s.instruction()]
            while s.peek() == ";":
                s.pos += 1
                if s.at_end():
                    break
                actions.append(s.instruction())
            pol = Policy(pid, owner, target, cond, tuple(states), tuple(actions))
        elif head == "PUBPOLICY":
            pid, owner = _parse_header(s)
            s.keyword("WHEN")
            s.allow_vars = False
            cond = s.cond_filter()
            content = Filter()
            if s.try_keyword("ON"):
                content = s.cond_filter()
            s.allow_vars = True
            s.keyword("DO")
            s.keyword("set")
            pairs = s.groups(s.pair, "[attr,value] pair")
            pol = PublicationPolicy(pid, owner, cond, content, tuple(pairs))
        else:
            raise ParseError(f"expected POLICY or PUBPOLICY, got {head!r}", 0)
    except (PolicyError, ValueError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(str(e), s.pos) from None
    if not s.at_end():
        s.error("trailing input")
    return pol


def parse_instruction(text: str) -> Instruction:
    s = _PolicyScanner(text, allow_vars=True)
    ins = s.instruction()
    if not s.at_end():
        s.error("trailing input")
    return ins


def parse_policies(text: str) -> list:
    """Parse a policy file: one policy per line, ``#`` comments allowed."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(parse_policy(line))
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from None
    return out


# -- evaluation ------------------------------------------------------------------

def evaluate_policy(pol: Policy, metadata: Mapping, entries: Iterable[Entry] = ()) -> bool:
    """Reverse-match the metadata condition, then check every state condition."""
    if not reverse_match(pol.meta_condition, metadata):
        return False
    if not pol.state_conditions:
        return True
    entries = list(entries)
    for c in pol.state_conditions:
        kind = c.entry_kind
        hit = any(e.kind == kind and filters_intersect(e.filter, c.pattern) for e in entries)
        if hit != c.kind.startswith("has_"):
            return False
    return True


def resolve(v, metadata: Mapping | None, old: Filter | None = None):
    """Substitute a template value; raises :class:`Unresolved` when it cannot."""
    if not isinstance(v, VarRef):
        return v
    if v.scope == "meta":
        # metadata attributes normally carry the prefix; a bare name is accepted too
        key = "meta." + v.attribute
        if metadata is not None and key not in metadata:
            key = v.attribute
        if metadata is None or key not in metadata:
            raise Unresolved(v.text())
        base = metadata[key]
    else:
        if old is None:
            raise Unresolved(v.text())
        vals = [p.value for p in old.on(v.attribute) if p.value is not None]
        if not vals:
            raise Unresolved(v.text())
        base = vals[0]
    if v.offset:
        if isinstance(base, str):
            raise Unresolved(f"{v.text()}: offset applied to text value")
        return base + v.offset
    return base


def _resolve_predicate(p: Predicate, metadata, old) -> Predicate:
    if not p.has_vars:
        return p
    val = resolve(p.value, metadata, old)
    if p.op in ORDERING_OPS and isinstance(val, str):
        raise Unresolved(f"{p.text()}: ordering operator bound to text value")
    return Predicate(p.attribute, p.op, val)


def instantiate_template(t: Filter, metadata: Mapping | None, old: Filter | None = None) -> Filter:
    """Replace ``$meta.`` / ``$old.`` variables with values; result is canonical."""
    return Filter(tuple(_resolve_predicate(p, metadata, old) for p in t.predicates))


def apply_deltas(f: Filter, deltas: Iterable[Delta], metadata: Mapping | None) -> Filter:
    preds = list(f.predicates)
    for d in deltas:
        if d.action == "del":
            preds = [p for p in preds if p.attribute != d.attribute]
            continue
        p = _resolve_predicate(d.predicate, metadata, f)
        if d.action == "set":
            preds = [q for q in preds if q.attribute != d.attribute]
        preds.append(p)
    return Filter(tuple(preds))


@dataclass(frozen=True)
class Retract:
    entry_id: object


@dataclass(frozen=True)
class Insert:
    kind: str
    filter: Filter


def execute_actions(
    policy_id: int,
    actions: Iterable[Instruction],
    target: NodeId,
    metadata: Mapping | None,
    entries: Iterable[Entry],
    diagnostics: list | None = None,
) -> list:
    """Turn a firing into concrete retract/insert operations on ``target``'s entries.

    The previous generation of ``(policy_id, target)`` is retracted first.
    Later instructions see the target's entries as left by earlier ones, but
    not the entries inserted by this same firing.
    """
    origin = (policy_id, target)
    live = sorted((e for e in entries if e.source == target), key=lambda e: e.id)
    ops: list = []
    keep = []
    for e in live:
        if e.origin == origin:
            ops.append(Retract(e.id))
        else:
            keep.append(e)
    live = keep

    def skip(ins, err):
        msg = f"policy {policy_id} for {target}: skipped {ins.text()} ({err})"
        log.info(msg)
        if diagnostics is not None:
            diagnostics.append(msg)

    for ins in actions:
        try:
            if isinstance(ins, InsertEntry):
                ops.append(Insert(ins.kind, instantiate_template(ins.template, metadata)))
            elif isinstance(ins, RetractMatching):
                pattern = instantiate_template(ins.pattern, metadata)
                hit = [e for e in live if e.kind == ins.kind and filters_intersect(e.filter, pattern)]
                ops.extend(Retract(e.id) for e in hit)
                live = [e for e in live if e not in hit]
            elif isinstance(ins, Modify):
                pattern = instantiate_template(ins.pattern, metadata)
                rest = []
                for e in live:
                    if not filters_intersect(e.filter, pattern):
                        rest.append(e)
                        continue
                    try:
                        new = apply_deltas(e.filter, ins.deltas, metadata)
                    except Unresolved as err:
                        skip(ins, err)
                        rest.append(e)
                        continue
                    ops.append(Retract(e.id))
                    ops.append(Insert(e.kind, new))
                live = rest
        except Unresolved as err:
            skip(ins, err)
    return ops


def apply_publication_policies(
    policies: Iterable[PublicationPolicy], p: Publication, metadata: Mapping | None
) -> Publication:
    """Apply matching publication policies in ascending id; later ones overwrite earlier ones."""
    md = metadata if metadata is not None else {}
    out = p
    for pol in sorted(policies, key=lambda q: q.id):
        if not match_filter(pol.meta_condition, md) or not match_filter(pol.content_condition, p):
            continue
        changes = {}
        try:
            for attr, v in pol.transform:
                changes[attr] = resolve(v, metadata)
        except Unresolved as err:
            log.info("publication policy %s skipped: %s", pol.id, err)
            continue
        d = dict(out)
        d.update(changes)
        out = Publication(d)
    return out


# -- store -------------------------------------------------------------------------

@dataclass(frozen=True)
class Firing:
    """Outcome of evaluating one (policy, target) pair.

    ``fire`` is False for retractions: the condition stopped holding, or the
    policy was removed.
    """

    policy: Policy
    metadata: Metadata
    fire: bool
    removed: bool = False

    @property
    def key(self) -> tuple:
        return (self.policy.id, self.metadata.client, self.metadata.version)


class PolicyStore:
    """Policies and metadata held by one broker (or by the oracle).

    ``is_matcher(policy, metadata)`` decides whether this store is the one
    allowed to fire a pair; ``entries_of(client)`` supplies the target's
    current ads/subs for state conditions.
    """

    def __init__(
        self,
        is_matcher: Callable[[Policy, Metadata], bool] = lambda pol, md: True,
        entries_of: Callable[[NodeId], Iterable[Entry]] = lambda client: (),
    ):
        self.policies: dict[int, Policy] = {}
        self.pub_policies: dict[int, PublicationPolicy] = {}
        self.metadata: dict[NodeId, Metadata] = {}
        self.is_matcher = is_matcher
        self.entries_of = entries_of
        self.fired: set = set()
        self.firing_counts: Counter = Counter()
        # (policy id, client) -> True if the last outcome sent was a firing
        self.outcomes: dict[tuple, bool] = {}

    def _evaluate(self, pol: Policy, md: Metadata) -> list[Firing]:
        if md.role and md.role != pol.target_role:
            return []
        if not self.is_matcher(pol, md):
            return []
        pair = (pol.id, md.client)
        if evaluate_policy(pol, md.attrs, self.entries_of(md.client)):
            key = (pol.id, md.client, md.version)
            if key in self.fired:
                return []
            self.fired.add(key)
            self.firing_counts[key] += 1
            self.outcomes[pair] = True
            return [Firing(pol, md, True)]
        if self.outcomes.get(pair, True):
            self.outcomes[pair] = False
            return [Firing(pol, md, False)]
        return []

    def install_policy(self, pol: Policy) -> list[Firing]:
        old = self.policies.get(pol.id)
        if old is not None:
            if old == pol:
                return []
            raise PolicyError(f"duplicate policy id {pol.id}")
        self.policies[pol.id] = pol
        out = []
        for client in sorted(self.metadata):
            out.extend(self._evaluate(pol, self.metadata[client]))
        return out

    def update_metadata(self, md: Metadata) -> list[Firing]:
        cur = self.metadata.get(md.client)
        if cur is not None and md.version <= cur.version:
            return []
        self.metadata[md.client] = md
        out = []
        for pid in sorted(self.policies):
            out.extend(self._evaluate(self.policies[pid], md))
        return out

    def remove_policy(self, pid: int) -> list[Firing]:
        pol = self.policies.pop(pid, None)
        if pol is None:
            return []
        out = []
        for (p, client), fired in sorted(self.outcomes.items(), key=lambda kv: kv[0][1]):
            if p != pid:
                continue
            md = self.metadata.get(client)
            if fired and md is not None:
                out.append(Firing(pol, md, False, removed=True))
        self.outcomes = {k: v for k, v in self.outcomes.items() if k[0] != pid}
        self.fired = {k for k in self.fired if k[0] != pid}
        return out

    def install_pub_policy(self, pol: PublicationPolicy) -> bool:
        old = self.pub_policies.get(pol.id)
        if old is not None:
            if old == pol:
                return False
            raise PolicyError(f"duplicate publication policy id {pol.id}")
        self.pub_policies[pol.id] = pol
        return True

    def remove_pub_policy(self, pid: int) -> bool:
        return self.pub_policies.pop(pid, None) is not None

    def evaluate_all(self) -> list[Firing]:
        """Re-run every stored pair (used after this store becomes a matcher)."""
        out = []
        for pid in sorted(self.policies):
            for client in sorted(self.metadata):
                out.extend(self._evaluate(self.policies[pid], self.metadata[client]))
        return out


def install_policy(store: PolicyStore, pol: Policy) -> list[Firing]:
    return store.install_policy(pol)


def update_metadata(store: PolicyStore, md: Metadata) -> list[Firing]:
    return store.update_metadata(md)


def remove_policy(store: PolicyStore, pid: int) -> list[Firing]:
    return store.remove_policy(pid)
