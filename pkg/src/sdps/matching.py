"""Indexed stores of subscriptions and advertisements."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Optional

from .model import Filter, MessageId, NodeId, filters_intersect, match_filter

AD = "ad"
SUB = "sub"


@dataclass(frozen=True)
class Entry:
    """A subscription or advertisement.

    ``origin`` is ``None`` for client-issued entries and ``(policy_id, target)``
    for entries generated by a policy firing on behalf of ``target``.
    """

    id: MessageId
    source: NodeId
    kind: str
    filter: Filter
    origin: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in (AD, SUB):
            raise ValueError(f"unknown entry kind {self.kind!r}")

    @property
    def generated(self) -> bool:
        return self.origin is not None


class DuplicateEntry(KeyError):
    pass


class EntryStore:
    """Entries keyed by id with source and attribute indexes.

    Each entry is posted under one access key: its first equality predicate
    ``(attr, value)`` if it has one, otherwise the attribute of its first
    predicate. Entries with an empty filter match everything and live in a
    separate list. A publication only needs to look at the postings of its own
    attributes, because every predicate requires its attribute to be present.
    """

    def __init__(self, entries: Iterable[Entry] = ()):
        self._by_id: dict[MessageId, Entry] = {}
        self._by_source: dict[NodeId, dict[MessageId, None]] = {}
        self._eq: dict[tuple, set] = {}
        self._attr: dict[str, set] = {}
        self._universal: set = set()
        for e in entries:
            self.insert(e)

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, id: MessageId) -> bool:
        return id in self._by_id

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda e: e.id))

    def get(self, id: MessageId) -> Entry | None:
        return self._by_id.get(id)

    @staticmethod
    def _key(f: Filter):
        for p in f.predicates:
            if p.op == "=":
                return ("eq", (p.attribute, p.value))
        if f.predicates:
            return ("attr", f.predicates[0].attribute)
        return None

    def _posting(self, key, create: bool = False) -> set | None:
        if key is None:
            return self._universal
        table = self._eq if key[0] == "eq" else self._attr
        if create:
            return table.setdefault(key[1], set())
        return table.get(key[1])

    def insert(self, e: Entry) -> None:
        if e.id in self._by_id:
            raise DuplicateEntry(str(e.id))
        self._by_id[e.id] = e
        self._by_source.setdefault(e.source, {})[e.id] = None
        self._posting(self._key(e.filter), create=True).add(e.id)

    def remove(self, id: MessageId) -> Entry | None:
        e = self._by_id.pop(id, None)
        if e is None:
            return None
        src = self._by_source[e.source]
        del src[id]
        if not src:
            del self._by_source[e.source]
        key = self._key(e.filter)
        posting = self._posting(key)
        posting.discard(id)
        if not posting and key is not None:
            table = self._eq if key[0] == "eq" else self._attr
            del table[key[1]]
        return e

    def match_publication(self, p: Mapping) -> list[Entry]:
        """Entries whose filter matches ``p``, sorted by id."""
        cand = set(self._universal)
        eq, attr = self._eq, self._attr
        for k, v in p.items():
            s = eq.get((k, v))
            if s:
                cand |= s
            s = attr.get(k)
            if s:
                cand |= s
        by_id = self._by_id
        out = [by_id[i] for i in cand if match_filter(by_id[i].filter, p)]
        out.sort(key=lambda e: e.id)
        return out

    def entries_by_source(self, source: NodeId) -> list[Entry]:
        ids = self._by_source.get(source, ())
        return sorted((self._by_id[i] for i in ids), key=lambda e: e.id)

    def sources(self) -> list[NodeId]:
        return sorted(self._by_source)

    def intersecting_entries(self, f: Filter) -> list[Entry]:
        return [e for e in self if filters_intersect(e.filter, f)]


def insert_entry(store: EntryStore, e: Entry) -> None:
    store.insert(e)


def remove_entry(store: EntryStore, id: MessageId) -> Entry | None:
    return store.remove(id)


def match_publication(store: EntryStore, p: Mapping) -> list[Entry]:
    return store.match_publication(p)


def entries_by_source(store: EntryStore, source: NodeId) -> list[Entry]:
    return store.entries_by_source(source)


def intersecting_entries(store: EntryStore, f: Filter) -> list[Entry]:
    return store.intersecting_entries(f)


def reverse_match(condition: Filter, metadata: Mapping) -> bool:
    """Match a policy condition (a subscription) against a metadata record (a publication)."""
    return match_filter(condition, metadata)
