"""Scenario scripts: parsing, formatting, fault injection and random generation.

A scenario is a list of lines ``<time> <action> <args...>``. Brokers and
clients are referred to by join order: ``b3`` is the third broker to join,
``c5`` the fifth client. Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    Filter,
    ParseError,
    Predicate,
    Publication,
    VarRef,
    format_filter,
    format_publication,
    parse_filter,
    parse_publication,
)
from .policy import (
    Delta,
    InsertEntry,
    Modify,
    Policy,
    PublicationPolicy,
    RetractMatching,
    StateCondition,
    parse_policy,
)

ROLE_ALIASES = {
    "producer": "producer",
    "consumer": "consumer",
    "advertiser": "advertiser",
    "interest-manager": "interest-manager",
    "im": "interest-manager",
}
MODES = ("drop", "feedback")
ENTRY_ACTIONS = ("advertise", "unadvertise", "subscribe", "unsubscribe")
ACTIONS = (
    "join-broker", "join-client", *ENTRY_ACTIONS, "publish", "metadata",
    "install-policy", "remove-policy", "fail-broker", "heartbeat-tick",
    "depart-client", "migrate",
)
_BROKER = re.compile(r"b[1-9]\d*\Z")
_CLIENT = re.compile(r"c[1-9]\d*\Z")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Event:
    time: int
    action: str
    args: tuple = ()
    line: int = field(default=0, compare=False)

    def text(self) -> str:
        parts = [str(self.time), self.action]
        args = self.args
        if self.action == "join-client" and args[2] is not None:
            args = (*args[:2], "@" + args[2])
        for a in args:
            if a is None:
                continue
            if isinstance(a, Filter):
                parts.append(format_filter(a) if len(a) else "*")
            elif isinstance(a, Publication):
                parts.append(format_publication(a))
            elif isinstance(a, (Policy, PublicationPolicy)):
                parts.append(a.text())
            else:
                parts.append(str(a))
        return " ".join(parts)


def _alias(tok: str, pattern, what: str) -> str:
    if not pattern.match(tok):
        raise ValueError(f"expected a {what} alias, got {tok!r}")
    return tok


def _parse_args(action: str, rest: str) -> tuple:
    if action in ("join-broker", "heartbeat-tick"):
        if rest:
            raise ValueError(f"{action} takes no arguments")
        return ()
    if action == "join-client":
        toks = rest.split()
        if not toks or toks[0] not in ROLE_ALIASES:
            raise ValueError(f"join-client needs a role, one of {sorted(ROLE_ALIASES)}")
        role, mode, hint = ROLE_ALIASES[toks[0]], "drop", None
        for t in toks[1:]:
            if t in MODES:
                mode = t
            elif t.startswith("@"):
                hint = _alias(t[1:], _BROKER, "broker")
            else:
                raise ValueError(f"unexpected join-client argument {t!r}")
        return (role, mode, hint)
    if action in ("fail-broker", "migrate"):
        return (_alias(rest.strip(), _BROKER, "broker"),)
    if action == "depart-client":
        return (_alias(rest.strip(), _CLIENT, "client"),)
    who, _, body = rest.partition(" ")
    who = _alias(who, _CLIENT, "client")
    body = body.strip()
    if not body:
        raise ValueError(f"{action} needs an argument")
    if action in ENTRY_ACTIONS:
        return (who, Filter() if body == "*" else parse_filter(body))
    if action in ("publish", "metadata"):
        return (who, parse_publication(body))
    if action == "install-policy":
        return (who, parse_policy(body))
    if action == "remove-policy":
        if not body.isdigit():
            raise ValueError("remove-policy needs an integer policy id")
        return (who, int(body))
    raise ValueError(f"unknown action {action!r}")


def load_scenario(text: str) -> list[Event]:
    """Parse scenario text into events ordered by (time, line)."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        if len(parts) < 2:
            raise ScenarioError("expected '<time> <action> [args]'", lineno)
        t, action = parts[0], parts[1]
        rest = parts[2] if len(parts) > 2 else ""
        if not t.isdigit():
            raise ScenarioError(f"bad time {t!r}", lineno)
        if action not in ACTIONS:
            raise ScenarioError(f"unknown action {action!r}", lineno)
        try:
            args = _parse_args(action, rest)
        except (ParseError, ValueError) as e:
            raise ScenarioError(str(e), lineno) from None
        events.append(Event(int(t), action, args, lineno))
    return sort_events(events)


def sort_events(events) -> list[Event]:
    return sorted(events, key=lambda e: e.time)


def format_scenario(events) -> str:
    return "".join(e.text() + "\n" for e in events)


def inject_fault(events, broker: str, time: int) -> list[Event]:
    """Return ``events`` plus a failure of ``broker`` (an alias such as ``b2``) at ``time``."""
    _alias(broker, _BROKER, "broker")
    k = int(broker[1:])
    joined = sum(1 for e in events if e.action == "join-broker" and e.time < time)
    if joined < k:
        raise ValueError(f"broker {broker} has not joined before time {time}")
    return sort_events(list(events) + [Event(time, "fail-broker", (broker,))])


# -- random scenarios ----------------------------------------------------------------

TOPICS = ("a", "b", "c", "d")
REGIONS = ("n", "s", "e", "w")
GEN = Predicate("tag", "=", "g")
NOT_GEN = Predicate("tag", "!=", "g")
SETTLE = 80


@dataclass
class GenParams:
    """Knobs for :func:`random_scenario`.

    ``state`` selects state conditions: ``None``, ``"ad"`` or ``"all"``.
    ``failure`` adds one broker failure followed by a quiet period and a
    final round of publications.
    """

    max_brokers: int = 12
    max_clients: int = 30
    max_pubs: int = 200
    policies: bool = True
    pub_policies: bool = True
    destructive: bool = True
    state: Optional[str] = "ad"
    churn: bool = True
    feedback: bool = True
    failure: bool = False


def _price(rng) -> float:
    return float(rng.choice((rng.randrange(0, 101), rng.randrange(0, 200) / 2)))


def _pred(rng, attr: str) -> Predicate:
    if attr == "price":
        op = rng.choice(("<", "<=", ">", ">=", "=", "!=", "present", "<", ">"))
        return Predicate("price", op, None if op == "present" else _price(rng))
    values = TOPICS if attr == "topic" else REGIONS
    op = rng.choice(("=", "=", "!=", "present"))
    return Predicate(attr, op, None if op == "present" else rng.choice(values))


def random_filter(rng, extra=(), p: float = 0.5) -> Filter:
    preds = [_pred(rng, a) for a in ("topic", "price", "region") if rng.random() < p]
    if rng.random() < 0.15:
        preds.append(Predicate("tag", rng.choice(("=", "!=")), rng.choice(("g", "x"))))
    return Filter(tuple(preds) + tuple(extra))


def random_publication(rng) -> Publication:
    d = {}
    if rng.random() < 0.9:
        d["topic"] = rng.choice(TOPICS)
    if rng.random() < 0.9:
        d["price"] = _price(rng)
    if rng.random() < 0.6:
        d["region"] = rng.choice(REGIONS)
    r = rng.random()
    if r < 0.45:
        d["tag"] = "g"
    elif r < 0.8:
        d["tag"] = "x"
    if not d:
        d["topic"] = rng.choice(TOPICS)
    return Publication(d)


def random_metadata(rng) -> Publication:
    d = {"meta.rank": float(rng.randrange(0, 10))}
    if rng.random() < 0.85:
        d["meta.topic"] = rng.choice(TOPICS)
    if rng.random() < 0.7:
        d["meta.region"] = rng.choice(REGIONS)
    if rng.random() < 0.7:
        d["meta.limit"] = float(rng.randrange(10, 100))
    return Publication(d)


def _meta_condition(rng) -> Filter:
    r = rng.random()
    if r < 0.3:
        return Filter()
    if r < 0.6:
        return Filter((Predicate("meta.rank", rng.choice((">", "<=")), float(rng.randrange(0, 10))),))
    if r < 0.8:
        return Filter((Predicate("meta.region", "=", rng.choice(REGIONS)),))
    return Filter((Predicate("meta.topic", "present"),))


def _template(rng) -> Filter:
    """Generated entries always carry ``tag = 'g'`` so destructive patterns can avoid them."""
    preds = [GEN]
    r = rng.random()
    if r < 0.4:
        preds.append(Predicate("topic", "=", VarRef("meta", "topic")))
    elif r < 0.7:
        preds.append(Predicate("price", "<", VarRef("meta", "limit")))
    elif r < 0.85:
        preds.append(Predicate("region", "=", VarRef("meta", "region")))
    else:
        preds.append(Predicate("topic", "=", rng.choice(TOPICS)))
    return Filter(tuple(preds))


def random_policy(rng, pid: int, target: str, *, kind: str = "insert", state: str | None = None) -> Policy:
    entry = "ad" if target == "producer" else "sub"
    states = ()
    if kind == "insert":
        actions = tuple(InsertEntry(entry, _template(rng)) for _ in range(rng.choice((1, 1, 2))))
        if state:
            kinds = ["has_ad", "lacks_ad"]
            if state == "all":
                kinds += ["has_sub", "lacks_sub"]
            pattern = Filter((NOT_GEN, _pred(rng, rng.choice(("topic", "price")))))
            states = (StateCondition(rng.choice(kinds), pattern),)
    elif rng.random() < 0.5:
        pattern = Filter((NOT_GEN, Predicate("topic", "=", VarRef("meta", "topic"))))
        actions = (RetractMatching(entry, pattern),)
    else:
        pattern = Filter((NOT_GEN, Predicate("price", "present")))
        deltas = (
            Delta("set", "price", Predicate("price", "<", VarRef("old", "price", float(rng.randrange(1, 20))))),
            Delta("add", "region", Predicate("region", "present")),
        )
        actions = (Modify(pattern, deltas),)
    return Policy(pid, None, target, _meta_condition(rng), states, actions)


def random_pub_policy(rng, pid: int) -> PublicationPolicy:
    cond = Filter((Predicate("meta.region", "present"),)) if rng.random() < 0.5 else Filter()
    content = Filter((Predicate("price", ">", _price(rng)),)) if rng.random() < 0.5 else Filter()
    if rng.random() < 0.5:
        transform = (("region", VarRef("meta", "region")),)
    else:
        transform = (("topic", rng.choice(TOPICS)),)
    return PublicationPolicy(pid, None, cond, content, transform)


class _Builder:
    def __init__(self):
        self.events: list[Event] = []
        self.t = 0

    def add(self, action: str, *args, step: int = 1) -> None:
        self.events.append(Event(self.t, action, args))
        self.t += step

    def settle(self, gap: int = SETTLE) -> None:
        self.t += gap


def random_scenario(rng: random.Random, params: GenParams | None = None) -> list[Event]:
    """A random scenario whose rounds are separated by quiet periods.

    Within a round no event depends on the effects of another, so a
    simulator run and the topology-free oracle see the same state. Policies
    either include one destructive policy or state conditions, never both.
    """
    P = params or GenParams()
    b = _Builder()
    nb = rng.randint(2 if P.failure else 1, max(2, P.max_brokers))
    nc = rng.randint(2, max(2, P.max_clients))
    late = rng.randint(0, min(3, nc - 2)) if P.churn else 0
    early = nc - late
    roles = []
    for i in range(nc):
        r = rng.random()
        if P.policies and r < 0.12:
            roles.append("advertiser")
        elif P.policies and r < 0.24:
            roles.append("interest-manager")
        elif r < 0.6:
            roles.append("producer")
        else:
            roles.append("consumer")
    if "producer" not in roles[:early]:
        roles[0] = "producer"
    if "consumer" not in roles[:early]:
        roles[0 if roles.index("producer") != 0 else 1] = "consumer"

    for _ in range(nb):
        b.add("join-broker")
    b.settle(5)
    for i in range(early):
        mode = rng.choice(MODES) if P.feedback else "drop"
        hint = f"@b{rng.randint(1, nb)}" if rng.random() < 0.2 else None
        b.add("join-client", roles[i], mode, hint[1:] if hint else None)
    b.settle(20)

    def client_ops(idx):
        for i in idx:
            c = f"c{i + 1}"
            if roles[i] == "producer":
                for _ in range(rng.choice((0, 1, 1, 2))):
                    b.add("advertise", c, random_filter(rng, p=0.4))
                if rng.random() < 0.8:
                    b.add("metadata", c, random_metadata(rng))
            elif roles[i] == "consumer":
                for _ in range(rng.choice((1, 1, 2, 3))):
                    b.add("subscribe", c, random_filter(rng))
                if rng.random() < 0.8:
                    b.add("metadata", c, random_metadata(rng))

    client_ops(range(early))
    b.settle()

    pid = 0
    owners = {"producer": [i for i in range(early) if roles[i] == "advertiser"],
              "consumer": [i for i in range(early) if roles[i] == "interest-manager"]}
    installed = []
    # state conditions and destructive policies never share a scenario
    destructive = P.destructive and not (P.state and rng.random() < 0.5)
    state = None if destructive else P.state
    if P.policies:
        for target, who in owners.items():
            for i in who:
                for _ in range(rng.choice((1, 1, 2))):
                    pid += 1
                    use_state = state if (state and rng.random() < 0.5) else None
                    b.add("install-policy", f"c{i + 1}", random_policy(rng, pid, target, state=use_state))
                    installed.append((i, pid))
        if P.pub_policies and owners["producer"] and rng.random() < 0.6:
            pid += 1
            b.add("install-policy", f"c{owners['producer'][0] + 1}", random_pub_policy(rng, pid))
        b.settle()
        if destructive:
            cands = [(t, i) for t, who in owners.items() for i in who]
            if cands and rng.random() < 0.7:
                target, i = rng.choice(cands)
                pid += 1
                b.add("install-policy", f"c{i + 1}", random_policy(rng, pid, target, kind="destructive"))
                installed.append((i, pid))
                b.settle()

    producers = [i for i in range(early) if roles[i] == "producer"]
    n_pubs = rng.randint(1, P.max_pubs)
    first = n_pubs // 2 if P.churn or P.failure else n_pubs

    def pubs(k, pool):
        for _ in range(k):
            b.add("publish", f"c{rng.choice(pool) + 1}", random_publication(rng))

    pubs(first, producers)
    b.settle()

    departed = set()
    if P.churn:
        for i in range(early):
            c = f"c{i + 1}"
            r = rng.random()
            if roles[i] in ("producer", "consumer") and r < 0.25:
                b.add("metadata", c, random_metadata(rng))
            elif roles[i] == "consumer" and r < 0.35:
                b.add("subscribe", c, random_filter(rng))
            elif roles[i] == "producer" and r < 0.35:
                b.add("advertise", c, random_filter(rng, p=0.3))
        for i in range(early):
            if roles[i] in ("producer", "consumer") and rng.random() < 0.06 and len(producers) > 1:
                if i in producers:
                    producers.remove(i)
                departed.add(i)
                b.add("depart-client", f"c{i + 1}")
        if installed and rng.random() < 0.3:
            b.settle()
            i, p = rng.choice(installed)
            b.add("remove-policy", f"c{i + 1}", p)
        if nb < P.max_brokers and rng.random() < 0.5:
            b.add("join-broker")
        for i in range(early, nc):
            b.add("join-client", roles[i], rng.choice(MODES) if P.feedback else "drop", None)
        b.settle()
        # second-phase removals keep their own round so they never race the additions above
        removed = False
        for e in list(b.events):
            if removed:
                break
            if e.action == "subscribe" and rng.random() < 0.1 and int(e.args[0][1:]) - 1 not in departed:
                b.add("unsubscribe", e.args[0], e.args[1])
                removed = True
            elif e.action == "advertise" and rng.random() < 0.1 and int(e.args[0][1:]) - 1 not in departed:
                b.add("unadvertise", e.args[0], e.args[1])
                removed = True
        client_ops(range(early, nc))
        producers += [i for i in range(early, nc) if roles[i] == "producer"]
        b.settle()
        pubs(n_pubs - first, producers)
    if P.failure:
        b.settle(20)
        b.add("fail-broker", f"b{rng.randint(1, nb)}")
        b.settle(250)
        pubs(max(1, n_pubs - first), producers)
    return b.events
