"""Values, predicates, filters, publications and their textual grammar.

Filters are written as bracketed groups::

    [topic,=,'stock'],[price,<,50],[volume,present]

and publications as attribute/value pairs::

    [topic,'stock'],[price,35]

Every :class:`Filter` is canonical once constructed: predicates are sorted
and deduplicated, so two filters compare equal iff they have the same text.
"""
from __future__ import annotations

import math
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from functools import total_ordering
from typing import Optional, Union

Value = Union[str, float]

OPS = ("=", "!=", "<", "<=", ">", ">=", "present")
ORDERING_OPS = frozenset({"<", "<=", ">", ">="})

ATTR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_NUM_RE = re.compile(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_NODE_RE = re.compile(r"([a-z]+)(\d+)\Z")


class ParseError(ValueError):
    """Raised on malformed filter/publication/policy text."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)


# -- values ------------------------------------------------------------------

def number(x) -> float:
    """Coerce to a finite float; rejects bools, NaN and infinities."""
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError(f"not a number: {x!r}")
    v = float(x)
    if not math.isfinite(v):
        raise ValueError(f"numbers must be finite, got {x!r}")
    return v + 0.0  # folds -0.0 into 0.0


def value(x) -> Value:
    if isinstance(x, str):
        return x
    return number(x)


def is_text(v) -> bool:
    return isinstance(v, str)


def format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def format_text(s: str) -> str:
    s = s.replace("\\", "\\\\").replace("'", "\\'").replace("\n", "\\n")
    return "'" + s + "'"


def format_value(v) -> str:
    if isinstance(v, VarRef):
        return v.text()
    if isinstance(v, str):
        return format_text(v)
    return format_number(v)


def _value_key(v) -> tuple:
    if v is None:
        return (0, 0.0, "")
    if isinstance(v, VarRef):
        return (3, 0.0, v.text())
    if isinstance(v, str):
        return (2, 0.0, v)
    return (1, v, "")


@dataclass(frozen=True)
class VarRef:
    """Template variable: ``$meta.<attr>`` or ``$old.<attr>``, plus an optional numeric offset."""

    scope: str
    attribute: str
    offset: float = 0.0

    def __post_init__(self):
        if self.scope not in ("meta", "old"):
            raise ValueError(f"unknown variable scope {self.scope!r}")
        if not ATTR_RE.fullmatch(self.attribute):
            raise ValueError(f"invalid attribute name {self.attribute!r}")
        object.__setattr__(self, "offset", number(self.offset))

    def text(self) -> str:
        s = f"${self.scope}.{self.attribute}"
        if self.offset > 0:
            s += "+" + format_number(self.offset)
        elif self.offset < 0:
            s += "-" + format_number(-self.offset)
        return s


# -- identifiers -------------------------------------------------------------

ROLE_TAGS = {
    "broker": "b",
    "producer": "p",
    "consumer": "c",
    "advertiser": "a",
    "interest-manager": "i",
    "controller": "k",
}
TAG_ROLES = {t: r for r, t in ROLE_TAGS.items()}
CLIENT_ROLES = ("producer", "consumer", "advertiser", "interest-manager")


@total_ordering
@dataclass(frozen=True, eq=True)
class NodeId:
    role: str
    num: int

    def __post_init__(self):
        if self.role not in ROLE_TAGS:
            raise ValueError(f"unknown role {self.role!r}")

    def __lt__(self, other: NodeId) -> bool:
        return (self.num, self.role) < (other.num, other.role)

    def __str__(self) -> str:
        return f"{ROLE_TAGS[self.role]}{self.num}"

    @property
    def is_broker(self) -> bool:
        return self.role == "broker"

    @property
    def is_client(self) -> bool:
        return self.role in CLIENT_ROLES

    @classmethod
    def parse(cls, text: str) -> NodeId:
        m = _NODE_RE.match(text)
        if not m or m.group(1) not in TAG_ROLES:
            raise ParseError(f"bad node id {text!r}")
        return cls(TAG_ROLES[m.group(1)], int(m.group(2)))


CONTROLLER_ID = NodeId("controller", 0)


@total_ordering
@dataclass(frozen=True)
class MessageId:
    source: NodeId
    seq: int

    def __lt__(self, other: MessageId) -> bool:
        return (self.source, self.seq) < (other.source, other.seq)

    def __str__(self) -> str:
        return f"{self.source}:{self.seq}"

    @classmethod
    def parse(cls, text: str) -> MessageId:
        src, sep, seq = text.partition(":")
        if not sep or not seq.isdigit():
            raise ParseError(f"bad message id {text!r}")
        return cls(NodeId.parse(src), int(seq))


# -- predicates and filters ----------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    attribute: str
    op: str
    value: Optional[Union[str, float, VarRef]] = None

    def __post_init__(self):
        if not ATTR_RE.fullmatch(self.attribute):
            raise ValueError(f"invalid attribute name {self.attribute!r}")
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        if self.op == "present":
            if self.value is not None:
                raise ValueError("'present' takes no value")
            return
        if self.value is None:
            raise ValueError(f"operator {self.op!r} needs a value")
        if not isinstance(self.value, VarRef):
            object.__setattr__(self, "value", value(self.value))
            if self.op in ORDERING_OPS and isinstance(self.value, str):
                raise ValueError(f"ordering operator {self.op!r} needs a number value")

    def sort_key(self) -> tuple:
        return (self.attribute, self.op, _value_key(self.value))

    def text(self) -> str:
        if self.op == "present":
            return f"[{self.attribute},present]"
        return f"[{self.attribute},{self.op},{format_value(self.value)}]"

    @property
    def has_vars(self) -> bool:
        return isinstance(self.value, VarRef)


@dataclass(frozen=True)
class Filter:
    """Conjunction of predicates, always held in canonical order."""

    predicates: tuple = ()

    def __post_init__(self):
        preds = {p.sort_key(): p for p in self.predicates}
        object.__setattr__(self, "predicates", tuple(preds[k] for k in sorted(preds)))

    def __iter__(self) -> Iterator[Predicate]:
        return iter(self.predicates)

    def __len__(self) -> int:
        return len(self.predicates)

    def __str__(self) -> str:
        return format_filter(self)

    @property
    def attributes(self) -> set:
        return {p.attribute for p in self.predicates}

    @property
    def is_template(self) -> bool:
        return any(p.has_vars for p in self.predicates)

    def on(self, attribute: str) -> list:
        return [p for p in self.predicates if p.attribute == attribute]


class Publication(Mapping):
    """Immutable attribute -> value record."""

    __slots__ = ("_d", "_hash")

    def __init__(self, attrs: Mapping | Iterable = ()):
        items = attrs.items() if isinstance(attrs, Mapping) else attrs
        d = {}
        for k, v in items:
            if not ATTR_RE.fullmatch(k):
                raise ValueError(f"invalid attribute name {k!r}")
            if k in d:
                raise ValueError(f"duplicate attribute {k!r}")
            d[k] = v if isinstance(v, VarRef) else value(v)
        self._d = d
        self._hash = None

    def __getitem__(self, k):
        return self._d[k]

    def __iter__(self):
        return iter(self._d)

    def __len__(self):
        return len(self._d)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._d.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Publication):
            return self._d == other._d
        return NotImplemented

    def __repr__(self):
        return f"Publication({format_publication(self)})"

    def __str__(self):
        return format_publication(self)

    def replace(self, **changes) -> Publication:
        d = dict(self._d)
        d.update(changes)
        return Publication(d)


# -- parsing -----------------------------------------------------------------

class _Scanner:
    """Cursor over a text buffer shared by every grammar in the package."""

    def __init__(self, text: str, pos: int = 0, allow_vars: bool = False):
        self.text = text
        self.pos = pos
        self.allow_vars = allow_vars

    def error(self, msg: str):
        raise ParseError(msg, self.pos)

    def ws(self):
        n = len(self.text)
        while self.pos < n and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def at_end(self) -> bool:
        return self.peek() == ""

    def attribute(self) -> str:
        self.ws()
        m = ATTR_RE.match(self.text, self.pos)
        if not m:
            self.error("expected attribute name")
        self.pos = m.end()
        return m.group(0)

    def op(self) -> str:
        self.ws()
        for op in ("present", "!=", "<=", ">=", "=", "<", ">"):
            if self.text.startswith(op, self.pos):
                self.pos += len(op)
                return op
        self.error("expected operator")

    def quoted(self) -> str:
        self.expect("'")
        out = []
        t = self.text
        while True:
            if self.pos >= len(t):
                self.error("unterminated text value")
            c = t[self.pos]
            if c == "\\" and self.pos + 1 < len(t):
                nxt = t[self.pos + 1]
                out.append("\n" if nxt == "n" else nxt)
                self.pos += 2
            elif c == "'":
                self.pos += 1
                return "".join(out)
            else:
                out.append(c)
                self.pos += 1

    def num(self) -> float:
        self.ws()
        m = _NUM_RE.match(self.text, self.pos)
        if not m:
            self.error("expected number")
        self.pos = m.end()
        return number(float(m.group(0)))

    def var(self) -> VarRef:
        start = self.pos
        self.expect("$")
        m = re.compile(r"(meta|old)\.").match(self.text, self.pos)
        if not m:
            self.error("expected $meta.<attr> or $old.<attr>")
        self.pos = m.end()
        attr = self.attribute()
        offset = 0.0
        c = self.peek()
        if c and c in "+-":
            self.pos += 1
            offset = self.num()
            if c == "-":
                offset = -offset
        if not self.allow_vars:
            self.pos = start
            self.error("variables are only allowed in templates")
        return VarRef(m.group(1), attr, offset)

    def value(self):
        c = self.peek()
        if c == "'":
            s = self.quoted()
            if self.allow_vars and s.startswith("$"):
                return _Scanner(s, allow_vars=True).var()
            return s
        if c == "$":
            return self.var()
        return self.num()

    def predicate(self) -> Predicate:
        start = self.pos
        self.expect("[")
        attr = self.attribute()
        self.expect(",")
        op = self.op()
        val = None
        if op != "present":
            self.expect(",")
            vpos = self.pos
            val = self.value()
            if op in ORDERING_OPS and isinstance(val, str):
                self.pos = vpos
                self.error(f"ordering operator {op!r} needs a number value")
        self.expect("]")
        try:
            return Predicate(attr, op, val)
        except ValueError as e:
            raise ParseError(str(e), start) from None

    def pair(self) -> tuple:
        self.expect("[")
        attr = self.attribute()
        self.expect(",")
        val = self.value()
        self.expect("]")
        return attr, val

    def groups(self, item, what: str) -> list:
        if self.peek() != "[":
            self.error(f"expected at least one {what}")
        out = [item()]
        while True:
            save = self.pos
            c = self.peek()
            if c == ",":
                self.pos += 1
                if self.peek() != "[":
                    self.pos = save
                    break
                out.append(item())
            elif c == "[":
                out.append(item())
            else:
                break
        return out

    def filter(self) -> Filter:
        return Filter(tuple(self.groups(self.predicate, "[attr,op,value] group")))

    def publication(self) -> Publication:
        start = self.pos
        pairs = self.groups(self.pair, "[attr,value] pair")
        seen = set()
        for k, _ in pairs:
            if k in seen:
                self.pos = start
                self.error(f"duplicate attribute {k!r}")
            seen.add(k)
        return Publication(pairs)


def parse_filter(text: str) -> Filter:
    """Parse ``[attr,op,value]`` groups into a canonical filter."""
    s = _Scanner(text)
    f = s.filter()
    if not s.at_end():
        s.error("trailing input")
    return f


def parse_template(text: str) -> Filter:
    """Like :func:`parse_filter` but values may be ``$meta.x`` / ``$old.x`` variables."""
    s = _Scanner(text, allow_vars=True)
    f = s.filter()
    if not s.at_end():
        s.error("trailing input")
    return f


def parse_publication(text: str) -> Publication:
    s = _Scanner(text)
    p = s.publication()
    if not s.at_end():
        s.error("trailing input")
    return p


def format_filter(f: Filter) -> str:
    return ",".join(p.text() for p in f.predicates)


def format_publication(p: Publication) -> str:
    return ",".join(f"[{k},{format_value(p[k])}]" for k in sorted(p))


# -- evaluation ----------------------------------------------------------------

_MISSING = object()


def eval_predicate(p: Predicate, v=_MISSING) -> bool:
    """Evaluate one predicate against an attribute value (or its absence)."""
    if v is _MISSING or v is None:
        return False
    op = p.op
    if op == "present":
        return True
    want = p.value
    if isinstance(want, str) != isinstance(v, str):
        return False
    if op == "=":
        return v == want
    if op == "!=":
        return v != want
    if isinstance(v, str):
        return False
    if op == "<":
        return v < want
    if op == "<=":
        return v <= want
    if op == ">":
        return v > want
    return v >= want


def match_filter(f: Filter, p: Mapping) -> bool:
    get = p.get
    for pred in f.predicates:
        if not eval_predicate(pred, get(pred.attribute, _MISSING)):
            return False
    return True


def _satisfiable(preds: Iterable[Predicate]) -> bool:
    """Can a single attribute value satisfy all of ``preds``?"""
    kinds = set()
    eq, ne = set(), set()
    lo, lo_open = -math.inf, True
    hi, hi_open = math.inf, True
    for p in preds:
        if p.op == "present":
            continue
        v = p.value
        kinds.add(isinstance(v, str))
        if p.op == "=":
            eq.add(v)
        elif p.op == "!=":
            ne.add(v)
        elif p.op in (">", ">="):
            strict = p.op == ">"
            if v > lo or (v == lo and strict):
                lo, lo_open = v, strict
        else:
            strict = p.op == "<"
            if v < hi or (v == hi and strict):
                hi, hi_open = v, strict
    if len(kinds) > 1 or len(eq) > 1:
        return False
    if eq:
        (v,) = eq
        if v in ne:
            return False
        if isinstance(v, str):
            return True
        if v < lo or (v == lo and lo_open) or v > hi or (v == hi and hi_open):
            return False
        return True
    if lo < hi:
        return True
    return lo == hi and not lo_open and not hi_open and lo not in ne


def filter_satisfiable(f: Filter) -> bool:
    by_attr: dict[str, list] = {}
    for p in f.predicates:
        by_attr.setdefault(p.attribute, []).append(p)
    return all(_satisfiable(ps) for ps in by_attr.values())


def filters_intersect(a: Filter, b: Filter) -> bool:
    """True iff some publication could match both filters."""
    by_attr: dict[str, list] = {}
    for p in a.predicates:
        by_attr.setdefault(p.attribute, []).append(p)
    for p in b.predicates:
        by_attr.setdefault(p.attribute, []).append(p)
    return all(_satisfiable(ps) for ps in by_attr.values())


def exact_filter(p: Mapping) -> Filter:
    """The filter matching exactly the attribute values of ``p`` (extra attributes allowed)."""
    return Filter(tuple(Predicate(k, "=", v) for k, v in p.items()))
