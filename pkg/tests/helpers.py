"""Generators and brute-force oracles shared by the test modules."""
from __future__ import annotations

import itertools
import random
from pathlib import Path

from hypothesis import strategies as st

from sdps.model import Filter, Predicate, Publication, match_filter

DATA = Path(__file__).parent / "data"

ATTRS = ("a", "b", "c")
NUMS = (-1.0, 0.0, 1.5, 2.0, 5.0)
TEXTS = ("x", "y", "z")
MISSING = object()


def scenario_text(name: str) -> str:
    return (DATA / name).read_text()


# -- hypothesis strategies -----------------------------------------------------------

def predicates(attrs=ATTRS):
    num = st.builds(Predicate, st.sampled_from(attrs), st.sampled_from(("=", "!=", "<", "<=", ">", ">=")),
                    st.sampled_from(NUMS))
    text = st.builds(Predicate, st.sampled_from(attrs), st.sampled_from(("=", "!=")), st.sampled_from(TEXTS))
    present = st.builds(Predicate, st.sampled_from(attrs), st.just("present"))
    return st.one_of(num, text, present)


def filters(max_size: int = 4):
    return st.lists(predicates(), max_size=max_size).map(lambda ps: Filter(tuple(ps)))


def publications():
    value = st.one_of(st.sampled_from(NUMS), st.sampled_from(TEXTS),
                      st.floats(-10, 10, allow_nan=False).map(lambda x: round(x, 2)))
    return st.dictionaries(st.sampled_from(ATTRS), value, min_size=1).map(Publication)


# -- plain random generators (fast enough for 10^4 instances) -------------------------

def random_predicate(rng: random.Random) -> Predicate:
    attr = rng.choice(ATTRS)
    r = rng.random()
    if r < 0.1:
        return Predicate(attr, "present")
    if r < 0.35:
        return Predicate(attr, rng.choice(("=", "!=")), rng.choice(TEXTS))
    return Predicate(attr, rng.choice(("=", "!=", "<", "<=", ">", ">=")), rng.choice(NUMS))


def random_filter(rng: random.Random, max_size: int = 4) -> Filter:
    return Filter(tuple(random_predicate(rng) for _ in range(rng.randint(0, max_size))))


def random_publication(rng: random.Random) -> Publication:
    d = {}
    for a in ATTRS:
        r = rng.random()
        if r < 0.45:
            d[a] = rng.choice(NUMS) + rng.choice((0.0, 0.0, 0.25, -0.25))
        elif r < 0.7:
            d[a] = rng.choice(TEXTS)
    return Publication(d or {"a": 0.0})


# -- oracles -------------------------------------------------------------------------

def _candidates(attr: str, preds) -> list:
    nums = sorted({p.value for p in preds if p.attribute == attr and isinstance(p.value, float)})
    texts = {p.value for p in preds if p.attribute == attr and isinstance(p.value, str)}
    out = [MISSING, "fresh-text", 0.0]
    out.extend(texts)
    if nums:
        out.extend([nums[0] - 1, nums[-1] + 1])
    for lo, hi in zip(nums, nums[1:]):
        out.append((lo + hi) / 2)
    out.extend(nums)
    return out


def probe_intersect(a: Filter, b: Filter) -> bool:
    """Search a grid of publications that covers every region the constants carve out."""
    preds = a.predicates + b.predicates
    attrs = sorted({p.attribute for p in preds})
    grids = [_candidates(x, preds) for x in attrs]
    for combo in itertools.product(*grids):
        pub = {k: v for k, v in zip(attrs, combo) if v is not MISSING}
        if match_filter(a, pub) and match_filter(b, pub):
            return True
    return False


def linear_match(entries, p) -> set:
    return {e.id for e in entries if match_filter(e.filter, p)}


# -- wire messages -------------------------------------------------------------------

TRICKY = ("plain", "it's", "a,b", "[x]", "back\\slash", "two  spaces", "#hash", "ünï", "", "$meta.x")


def _node(rng, roles=("broker", "producer", "consumer", "advertiser", "interest-manager")):
    from sdps.model import NodeId
    return NodeId(rng.choice(roles), rng.randint(1, 999))


def _wire_publication(rng) -> Publication:
    d = {}
    for a in rng.sample(("price", "topic", "x.y", "_z", "n1"), rng.randint(1, 4)):
        d[a] = rng.choice(TRICKY) if rng.random() < 0.4 else rng.choice((0.0, -3.5, 1e-7, 12345.0, rng.uniform(-1e6, 1e6)))
    return Publication(d)


def _wire_filter(rng) -> Filter:
    preds = []
    for _ in range(rng.randint(0, 4)):
        attr = rng.choice(("price", "topic", "x.y", "_z"))
        r = rng.random()
        if r < 0.15:
            preds.append(Predicate(attr, "present"))
        elif r < 0.45:
            preds.append(Predicate(attr, rng.choice(("=", "!=")), rng.choice(TRICKY)))
        else:
            preds.append(Predicate(attr, rng.choice(("=", "!=", "<", "<=", ">", ">=")),
                                   round(rng.uniform(-1000, 1000), rng.randint(0, 4))))
    return Filter(tuple(preds))


def random_message(rng: random.Random):
    from sdps.matching import AD, SUB, Entry
    from sdps.model import MessageId
    from sdps.policy import Metadata
    from sdps.scenario import random_policy, random_pub_policy
    from sdps.wire import TYPES, Bundle, Delivery, GenState, Message

    t = rng.choice(TYPES)
    sender = _node(rng)
    mid = MessageId(_node(rng), rng.randint(0, 10 ** 6))
    to = _node(rng, ("broker",)) if rng.random() < 0.3 else None
    if t in ("PUB", "FEEDBACK"):
        body = _wire_publication(rng)
    elif t in ("ADV", "SUB"):
        src = mid.source if rng.random() < 0.7 else _node(rng)
        origin = (rng.randint(1, 50), src) if rng.random() < 0.3 else None
        body = Entry(mid, src, AD if t == "ADV" else SUB, _wire_filter(rng), origin)
    elif t in ("UNADV", "UNSUB", "DETACH", "BYE"):
        body = None
    elif t == "DELIVER":
        body = Delivery(_node(rng), MessageId(_node(rng), rng.randint(1, 99)), _wire_publication(rng))
    elif t == "META":
        body = Metadata(_node(rng), _wire_publication(rng), rng.randint(1, 99),
                        rng.choice(("", "producer", "consumer")),
                        _node(rng, ("broker",)) if rng.random() < 0.5 else None)
    elif t in ("POLICY", "FIRE"):
        kind = rng.choice(("insert", "destructive"))
        pol = random_policy(rng, rng.randint(1, 99), rng.choice(("producer", "consumer")), kind=kind,
                            state=rng.choice((None, "ad", "all")))
        if rng.random() < 0.5:
            pol = pol.with_owner(_node(rng, ("advertiser",) if pol.target_role == "producer" else ("interest-manager",)))
        if t == "POLICY":
            body = pol
        else:
            fire = rng.random() < 0.7
            body = Bundle(pol.id, _node(rng), rng.randint(1, 99), _wire_publication(rng),
                          pol.actions if fire else (), fire, not fire and rng.random() < 0.5)
    elif t == "PUBPOLICY":
        body = random_pub_policy(rng, rng.randint(1, 99))
    elif t in ("UNPOLICY", "UNPUBPOLICY"):
        body = rng.randint(0, 10 ** 4)
    elif t == "ATTACH":
        body = rng.choice(("drop", "feedback"))
    elif t == "STATE":
        entries = tuple((rng.choice((AD, SUB)), _wire_filter(rng)) for _ in range(rng.randint(0, 3)))
        body = GenState(rng.randint(1, 99), rng.randint(0, 99), rng.random() < 0.7, entries)
    elif t == "NOTICE":
        body = MessageId(_node(rng), rng.randint(1, 999))
    else:
        body = {"op": rng.choice(TRICKY), "n": rng.randint(-5, 5), "xs": [rng.random() for _ in range(2)],
                "nested": {"k": rng.choice(TRICKY)}}
    return Message(t, mid, sender, body, to)
