"""Messages exchanged between nodes and their one-line text encoding.

    v1 <TYPE> <id.source>:<id.seq> <from> [<to>] <payload>

``to`` is present only on directed messages (routed hop by hop toward a
broker). The payload is always last and uses the filter/publication/policy
grammars, or compact JSON for control messages.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from .matching import AD, SUB, Entry
from .model import (
    Filter,
    MessageId,
    NodeId,
    ParseError,
    Publication,
    _NODE_RE,
    format_filter,
    format_publication,
    parse_filter,
    parse_publication,
)
from .policy import Metadata, Policy, PublicationPolicy, parse_instruction, parse_policy

VERSION = "v1"


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    type: str
    id: MessageId
    sender: NodeId
    body: Any = None
    to: Optional[NodeId] = None


@dataclass(frozen=True)
class Delivery:
    subscriber: NodeId
    sub_id: MessageId
    publication: Publication


@dataclass(frozen=True)
class Bundle:
    """Instructions from a designated matcher to the target's edge broker."""

    policy_id: int
    target: NodeId
    version: int
    metadata: Publication
    actions: tuple
    fire: bool = True
    removed: bool = False


@dataclass(frozen=True)
class GenState:
    """What an edge broker holds for one (policy, target) pair after a firing.

    The target keeps the latest copy so a new edge can take over without the
    policy firing again.
    """

    policy_id: int
    version: int
    fire: bool
    entries: tuple = ()  # (kind, Filter) pairs


# -- payload codecs --------------------------------------------------------------

def _ftext(f: Filter) -> str:
    return format_filter(f) if len(f) else "*"


def _fparse(s: str) -> Filter:
    return Filter() if s.strip() == "*" else parse_filter(s)


def _ptext(p: Publication) -> str:
    return format_publication(p) if len(p) else "*"


def _pparse(s: str) -> Publication:
    return Publication() if s.strip() == "*" else parse_publication(s)


def _take_opts(payload: str, names) -> tuple[dict, str]:
    opts = {}
    rest = payload
    while True:
        head, _, tail = rest.partition(" ")
        key, eq, val = head.partition("=")
        if eq and key in names:
            opts[key] = val
            rest = tail
        else:
            return opts, rest


def _enc_entry(m: Message) -> str:
    e: Entry = m.body
    parts = []
    if e.source != m.id.source:
        parts.append(f"src={e.source}")
    if e.origin is not None:
        parts.append(f"pol={e.origin[0]}")
    parts.append(_ftext(e.filter))
    return " ".join(parts)


def _dec_entry(kind):
    def dec(payload: str, id: MessageId, sender: NodeId) -> Entry:
        opts, rest = _take_opts(payload, ("src", "pol"))
        source = NodeId.parse(opts["src"]) if "src" in opts else id.source
        origin = (int(opts["pol"]), source) if "pol" in opts else None
        return Entry(id, source, kind, _fparse(rest), origin)
    return dec


def _enc_meta(m: Message) -> str:
    md: Metadata = m.body
    parts = [md.role or "-", f"c={md.client}", f"v={md.version}"]
    if md.edge is not None:
        parts.append(f"edge={md.edge}")
    parts.append(_ptext(md.attrs))
    return " ".join(parts)


def _dec_meta(payload: str, id: MessageId, sender: NodeId) -> Metadata:
    role, _, rest = payload.partition(" ")
    opts, rest = _take_opts(rest, ("c", "v", "edge"))
    edge = NodeId.parse(opts["edge"]) if "edge" in opts else None
    return Metadata(NodeId.parse(opts["c"]), _pparse(rest), int(opts["v"]), "" if role == "-" else role, edge)


def _enc_deliver(m: Message) -> str:
    d: Delivery = m.body
    return f"{d.sub_id} {d.subscriber} {_ptext(d.publication)}"


def _dec_deliver(payload: str, id, sender) -> Delivery:
    sid, sub, rest = payload.split(" ", 2)
    return Delivery(NodeId.parse(sub), MessageId.parse(sid), _pparse(rest))


def _enc_bundle(m: Message) -> str:
    b: Bundle = m.body
    return json.dumps(
        {
            "policy": b.policy_id,
            "target": str(b.target),
            "version": b.version,
            "meta": _ptext(b.metadata),
            "actions": [a.text() for a in b.actions],
            "fire": b.fire,
            "removed": b.removed,
        },
        separators=(",", ":"),
        sort_keys=True,
    )


def _dec_bundle(payload: str, id, sender) -> Bundle:
    d = json.loads(payload)
    return Bundle(
        d["policy"],
        NodeId.parse(d["target"]),
        d["version"],
        _pparse(d["meta"]),
        tuple(parse_instruction(a) for a in d["actions"]),
        d["fire"],
        d.get("removed", False),
    )


def _enc_state(m: Message) -> str:
    g: GenState = m.body
    return json.dumps(
        {
            "policy": g.policy_id,
            "version": g.version,
            "fire": g.fire,
            "entries": [[k, _ftext(f)] for k, f in g.entries],
        },
        separators=(",", ":"),
        sort_keys=True,
    )


def _dec_state(payload: str, id, sender) -> GenState:
    d = json.loads(payload)
    entries = []
    for k, f in d["entries"]:
        if k not in (AD, SUB):
            raise WireError(f"bad entry kind {k!r}")
        entries.append((k, _fparse(f)))
    return GenState(d["policy"], d["version"], d["fire"], tuple(entries))


def _enc_json(m: Message) -> str:
    return json.dumps(m.body, separators=(",", ":"), sort_keys=True)


def _dec_json(payload: str, id, sender):
    body = json.loads(payload)
    if not isinstance(body, dict):
        raise WireError("control payload must be a JSON object")
    return body


def _enc_none(m: Message) -> str:
    return "-"


def _dec_none(payload: str, id, sender):
    if payload != "-":
        raise WireError(f"unexpected payload {payload!r}")
    return None


def _enc_text(m: Message) -> str:
    if not m.body or "\n" in m.body:
        raise WireError("text payload must be a non-empty single line")
    return m.body


CODECS = {
    "PUB": (lambda m: _ptext(m.body), lambda s, i, f: _pparse(s)),
    "ADV": (_enc_entry, _dec_entry(AD)),
    "SUB": (_enc_entry, _dec_entry(SUB)),
    "UNADV": (_enc_none, _dec_none),
    "UNSUB": (_enc_none, _dec_none),
    "DELIVER": (_enc_deliver, _dec_deliver),
    "FEEDBACK": (lambda m: _ptext(m.body), lambda s, i, f: _pparse(s)),
    "META": (_enc_meta, _dec_meta),
    "POLICY": (lambda m: m.body.text(), lambda s, i, f: _expect(parse_policy(s), Policy)),
    "PUBPOLICY": (lambda m: m.body.text(), lambda s, i, f: _expect(parse_policy(s), PublicationPolicy)),
    "UNPOLICY": (lambda m: str(m.body), lambda s, i, f: _int(s)),
    "UNPUBPOLICY": (lambda m: str(m.body), lambda s, i, f: _int(s)),
    "FIRE": (_enc_bundle, _dec_bundle),
    "STATE": (_enc_state, _dec_state),
    "ATTACH": (_enc_text, lambda s, i, f: s),
    "DETACH": (_enc_none, _dec_none),
    "NOTICE": (lambda m: str(m.body), lambda s, i, f: MessageId.parse(s)),
    "MIGRATE": (_enc_json, _dec_json),
    "HELLO": (_enc_json, _dec_json),
    "BOOT": (_enc_json, _dec_json),
    "BOOTACK": (_enc_json, _dec_json),
    "HB": (_enc_json, _dec_json),
    "CMD": (_enc_json, _dec_json),
    "BYE": (_enc_none, _dec_none),
    "ERR": (_enc_json, _dec_json),
}
TYPES = tuple(CODECS)


def _expect(obj, cls):
    if not isinstance(obj, cls):
        raise WireError(f"expected {cls.__name__}")
    return obj


def _int(s: str) -> int:
    if not s.isdigit():
        raise WireError(f"expected integer, got {s!r}")
    return int(s)


def encode_message(m: Message) -> bytes:
    if m.type not in CODECS:
        raise WireError(f"unknown message type {m.type!r}")
    payload = CODECS[m.type][0](m)
    if "\n" in payload:
        raise WireError("payload contains a newline")
    head = [VERSION, m.type, str(m.id), str(m.sender)]
    if m.to is not None:
        head.append(str(m.to))
    return (" ".join(head) + " " + payload + "\n").encode("utf-8")


def decode_message(data: bytes | str) -> Message:
    line = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    if not line.endswith("\n"):
        raise WireError("truncated message (no newline terminator)")
    line = line[:-1]
    parts = line.split(" ", 4)
    if parts[0] != VERSION:
        raise WireError(f"unsupported protocol version {parts[0]!r}")
    if len(parts) < 5:
        raise WireError("truncated message")
    _, mtype, mid, sender, rest = parts
    if mtype not in CODECS:
        raise WireError(f"unknown message type {mtype!r}")
    to = None
    head, _, tail = rest.partition(" ")
    if _NODE_RE.match(head) and tail:
        to = NodeId.parse(head)
        rest = tail
    try:
        id = MessageId.parse(mid)
        frm = NodeId.parse(sender)
        body = CODECS[mtype][1](rest, id, frm)
    except (ParseError, ValueError, KeyError, TypeError) as e:
        if isinstance(e, WireError):
            raise
        raise WireError(f"bad {mtype} payload: {e}") from None
    return Message(mtype, id, frm, body, to)
