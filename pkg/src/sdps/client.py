"""Client-side state machine shared by the simulator and the TCP client tool.

A client remembers everything it has issued so it can replay it after a
re-bootstrap or a migration to another edge broker.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .matching import AD, SUB, Entry
from .model import CONTROLLER_ID, Filter, MessageId, NodeId, Publication
from .policy import Metadata, Policy, PublicationPolicy
from .wire import Message

log = logging.getLogger(__name__)


@dataclass
class Received:
    time: float
    pub_id: MessageId
    sub_id: MessageId
    publication: Publication


@dataclass
class Client:
    role: str
    mode: str = "drop"
    hint: Optional[NodeId] = None
    id: Optional[NodeId] = None
    edge: Optional[NodeId] = None
    attached: bool = False
    seq: int = 0
    ads: dict = field(default_factory=dict)
    subs: dict = field(default_factory=dict)
    meta: Optional[Publication] = None
    meta_version: int = 0
    policies: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)
    deliveries: list = field(default_factory=list)
    feedback: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    generated: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    pub_tags: dict = field(default_factory=dict)
    departed: bool = False

    @property
    def temp_id(self) -> NodeId:
        return NodeId(self.role, 0)

    def next_id(self) -> MessageId:
        self.seq += 1
        return MessageId(self.id, self.seq)

    # -- bootstrap ------------------------------------------------------------------

    def boot_request(self, nonce=None, exclude=()) -> Message:
        body = {"role": self.role}
        if self.id is not None:
            body["id"] = str(self.id)
        if self.hint is not None:
            body["hint"] = str(self.hint)
        if exclude:
            body["exclude"] = [str(b) for b in exclude]
        if nonce is not None:
            body["nonce"] = nonce
        sender = self.id or self.temp_id
        return Message("BOOT", MessageId(sender, 0), sender, body)

    def on_bootack(self, body: dict) -> list:
        self.id = NodeId.parse(body["id"])
        return self.attach(NodeId.parse(body["edge"]))

    def attach(self, edge: NodeId) -> list:
        """Attach to ``edge`` and replay every issued item, then queued operations."""
        reissue = self.edge is not None
        self.edge = edge
        self.attached = True
        out = [self._to_edge("ATTACH", self.mode)]
        if reissue:
            self.ads = {self.next_id(): f for f in self.ads.values()}
            self.subs = {self.next_id(): f for f in self.subs.values()}
        for i, f in self.ads.items():
            out.append(self._to_edge("ADV", Entry(i, self.id, AD, f), i))
        for i, f in self.subs.items():
            out.append(self._to_edge("SUB", Entry(i, self.id, SUB, f), i))
        # hand over policy state before metadata so the new edge never fires twice
        for pid in sorted(self.generated):
            out.append(self._to_edge("STATE", self.generated[pid]))
        if self.meta is not None:
            out.append(self._meta_message())
        for pid in sorted(self.policies):
            out.append(self._policy_message(self.policies[pid]))
        pending, self.pending = self.pending, []
        for op, args in pending:
            out.extend(getattr(self, op)(*args))
        return out

    def lost_edge(self) -> None:
        self.attached = False

    # -- messages -------------------------------------------------------------------

    def _to_edge(self, type: str, body, id: MessageId | None = None) -> tuple:
        return (self.edge, Message(type, id or self.next_id(), self.id, body))

    def _meta_message(self) -> tuple:
        md = Metadata(self.id, self.meta, self.meta_version, self.role)
        return self._to_edge("META", md)

    def _policy_message(self, pol) -> tuple:
        t = "PUBPOLICY" if isinstance(pol, PublicationPolicy) else "POLICY"
        return self._to_edge(t, pol, self.next_id())

    def _queue(self, op: str, *args) -> bool:
        if self.departed:
            return True
        if not self.attached:
            self.pending.append((op, args))
            return True
        return False

    def advertise(self, f: Filter) -> list:
        if self._queue("advertise", f):
            return []
        i = self.next_id()
        self.ads[i] = f
        return [self._to_edge("ADV", Entry(i, self.id, AD, f), i)]

    def subscribe(self, f: Filter) -> list:
        if self._queue("subscribe", f):
            return []
        i = self.next_id()
        self.subs[i] = f
        return [self._to_edge("SUB", Entry(i, self.id, SUB, f), i)]

    def unadvertise(self, f: Filter) -> list:
        if self._queue("unadvertise", f):
            return []
        gone = [i for i, g in self.ads.items() if g == f]
        for i in gone:
            del self.ads[i]
        return [self._to_edge("UNADV", None, i) for i in gone]

    def unsubscribe(self, f: Filter) -> list:
        if self._queue("unsubscribe", f):
            return []
        gone = [i for i, g in self.subs.items() if g == f]
        for i in gone:
            del self.subs[i]
        return [self._to_edge("UNSUB", None, i) for i in gone]

    def publish(self, p: Publication, tag=None) -> list:
        """Publish ``p``; ``tag`` is remembered against the publication id."""
        if self._queue("publish", p, tag):
            return []
        i = self.next_id()
        if tag is not None:
            self.pub_tags[i] = tag
        return [self._to_edge("PUB", p, i)]

    def set_metadata(self, attrs: Publication) -> list:
        if self._queue("set_metadata", attrs):
            return []
        self.meta = attrs
        self.meta_version += 1
        return [self._meta_message()]

    def install_policy(self, pol: Policy | PublicationPolicy) -> list:
        if self._queue("install_policy", pol):
            return []
        if pol.owner is None:
            pol = pol.with_owner(self.id)
        self.policies[pol.id] = pol
        return [self._policy_message(pol)]

    def remove_policy(self, pid: int) -> list:
        if self._queue("remove_policy", pid):
            return []
        pol = self.policies.pop(pid, None)
        if pol is None:
            return []
        t = "UNPUBPOLICY" if isinstance(pol, PublicationPolicy) else "UNPOLICY"
        return [self._to_edge(t, pid)]

    def depart(self) -> list:
        if self.departed:
            return []
        out = []
        if self.attached:
            out.append(self._to_edge("BYE", None))
        if self.id is not None:
            out.append((CONTROLLER_ID, Message("BYE", self.next_id(), self.id, None)))
        self.departed = True
        self.attached = False
        return out

    def receive(self, msg: Message, now: float = 0) -> list:
        t = msg.type
        if t == "DELIVER":
            d = msg.body
            self.deliveries.append(Received(now, msg.id, d.sub_id, d.publication))
        elif t == "FEEDBACK":
            self.feedback.append((now, msg.id, msg.body))
        elif t == "STATE":
            self.generated[msg.body.policy_id] = msg.body
        elif t == "NOTICE":
            # a policy retracted one of our own entries; forget it so it is not re-issued
            self.ads.pop(msg.body, None)
            self.subs.pop(msg.body, None)
            self.notices.append(msg.body)
        elif t == "MIGRATE":
            if self.departed:
                return []
            self.attached = False
            return self.attach(NodeId.parse(msg.body["edge"]))
        elif t == "ERR":
            self.errors.append(msg.body.get("error"))
            log.warning("%s: %s", self.id, msg.body.get("error"))
        return []
