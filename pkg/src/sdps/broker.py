"""Per-broker routing state machine.

A :class:`Broker` consumes one message at a time through :meth:`Broker.handle`
and returns the messages it wants sent as ``(hop, message)`` pairs. It never
touches a transport, so the simulator and the TCP daemon drive the same code.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Optional

from .matching import AD, SUB, Entry, EntryStore
from .model import CONTROLLER_ID, MessageId, NodeId, match_filter
from .policy import (
    Insert,
    Metadata,
    Policy,
    PolicyError,
    PolicyStore,
    PublicationPolicy,
    Retract,
    apply_publication_policies,
    execute_actions,
)
from .routing import METADATA_FLOOD, POLICY_FLOOD, RENDEZVOUS, StrategyConfig, is_designated, supports_policy
from .wire import Bundle, Delivery, GenState, Message

log = logging.getLogger(__name__)

ADV_MODE = "adv"
RENDEZVOUS_MODE = "rendezvous"
DROP = "drop"
FEEDBACK = "feedback"


class RoutingFault(LookupError):
    """No next hop is known for a directed message's target."""


@dataclass
class ClientInfo:
    role: str
    mode: str = DROP


class Broker:
    def __init__(
        self,
        id: NodeId,
        *,
        forwarding: str = ADV_MODE,
        control: StrategyConfig | None = None,
        neighbors=(),
        next_hop: dict | None = None,
    ):
        if forwarding not in (ADV_MODE, RENDEZVOUS_MODE):
            raise ValueError(f"unknown forwarding mode {forwarding!r}")
        self.id = id
        self.forwarding = forwarding
        self.control = control or StrategyConfig()
        self.neighbors: set[NodeId] = set(neighbors)
        self.next_hop: dict[NodeId, NodeId] = dict(next_hop or {})
        self.clients: dict[NodeId, ClientInfo] = {}
        self.art = EntryStore()
        self.srt = EntryStore()
        self.last_hop: dict[MessageId, NodeId] = {}
        self.sent_to: dict[MessageId, set] = {}
        self.sub_edge: dict[MessageId, NodeId] = {}
        self.store = PolicyStore(self._is_matcher, self._state_entries)
        self.local_meta: dict[NodeId, Metadata] = {}
        self.local_policies: dict[int, Policy | PublicationPolicy] = {}
        self.applied: dict[tuple, tuple] = {}
        # departed policy owners whose policies this broker keeps matching
        self.adopted: set[NodeId] = set()
        self.stats: Counter = Counter()
        self.window: Counter = Counter()
        self.faults: list[str] = []
        self.diagnostics: list[str] = []
        self._seq = 0

    # -- small helpers ----------------------------------------------------------

    @property
    def rendezvous(self) -> Optional[NodeId]:
        return self.control.rendezvous

    def next_id(self) -> MessageId:
        self._seq += 1
        return MessageId(self.id, self._seq)

    def _msg(self, type: str, body=None, id: MessageId | None = None, to: NodeId | None = None):
        return Message(type, id or self.next_id(), self.id, body, to)

    def _is_matcher(self, pol: Policy, md: Metadata) -> bool:
        return is_designated(self.control, self.id, pol, md, self.clients.keys() | self.adopted)

    def _state_entries(self, client: NodeId) -> list[Entry]:
        return self.art.entries_by_source(client) + self.srt.entries_by_source(client)

    def _flood(self, msg: Message, exclude=None) -> list:
        return [(n, msg) for n in sorted(self.neighbors) if n != exclude]

    def _error(self, to: NodeId, text: str) -> list:
        self.diagnostics.append(text)
        log.warning("%s: %s", self.id, text)
        return [(to, self._msg("ERR", {"error": text}))]

    def route_directed(self, target: NodeId, msg: Message):
        """Next hop for ``msg`` toward ``target``; ``None`` means dispatch locally."""
        if target == self.id:
            return None
        hop = self.next_hop.get(target)
        if hop is None:
            raise RoutingFault(f"{self.id}: no route to {target}")
        return hop, msg

    def _direct(self, target: NodeId, msg: Message) -> list:
        msg = replace(msg, to=target)
        try:
            step = self.route_directed(target, msg)
        except RoutingFault as e:
            self.stats["routing-fault"] += 1
            self.faults.append(str(e))
            return [(CONTROLLER_ID, self._msg("ERR", {"error": str(e), "fault": "routing"}))]
        if step is None:
            return self._dispatch(msg, self.id)
        return [step]

    # -- entry point ------------------------------------------------------------

    def handle(self, msg: Message, frm: NodeId) -> list:
        """Process one inbound message from hop ``frm``."""
        self.stats[msg.type] += 1
        self.window[msg.type] += 1
        if msg.to is not None and msg.to != self.id and msg.to.is_broker:
            return self._direct(msg.to, msg)
        return self._dispatch(msg, frm)

    def _dispatch(self, msg: Message, frm: NodeId) -> list:
        t = msg.type
        if t == "PUB":
            return self.handle_publish(msg, frm)
        if t == "ADV":
            return self.handle_advertise(msg.body, frm)
        if t == "SUB":
            return self.handle_subscribe(msg.body, frm, edge=msg.sender)
        if t == "UNADV":
            return self.handle_unadvertise(msg.id, frm)
        if t == "UNSUB":
            return self.handle_unsubscribe(msg.id, frm)
        if t == "DELIVER":
            return self._on_deliver(msg)
        if t == "META":
            return self._on_metadata(msg.body, frm)
        if t == "POLICY":
            return self._on_policy(msg.body, frm)
        if t == "UNPOLICY":
            return self._on_unpolicy(msg.body, frm)
        if t == "PUBPOLICY":
            return self._on_pub_policy(msg.body, frm)
        if t == "UNPUBPOLICY":
            return self._on_unpub_policy(msg.body, frm)
        if t == "FIRE":
            return self._on_fire(msg.body)
        if t == "STATE":
            return self._on_state(msg.body, frm)
        if t == "ATTACH":
            mode = msg.body if msg.body in (DROP, FEEDBACK) else DROP
            self.handle_client_attach(frm, ClientInfo(frm.role, mode))
            return []
        if t in ("DETACH", "BYE"):
            return self.handle_client_detach(frm, departing=t == "BYE")
        if t == "CMD":
            return self.handle_control_command(msg.body)
        self.stats["ignored"] += 1
        return []

    # -- advertisements -----------------------------------------------------------

    def handle_advertise(self, ad: Entry, frm: NodeId) -> list:
        if ad.id in self.art:
            return []
        self.art.insert(ad)
        self.last_hop[ad.id] = frm
        out = self._flood(Message("ADV", ad.id, self.id, ad), exclude=frm)
        if self.forwarding == ADV_MODE and frm in self.neighbors:
            # subscriptions that arrived before this ad now need a path toward it
            for s in self.srt.intersecting_entries(ad.filter):
                sent = self.sent_to.setdefault(s.id, set())
                if frm not in sent and self.last_hop.get(s.id) != frm:
                    sent.add(frm)
                    out.append((frm, Message("SUB", s.id, self.id, s)))
        return out

    def handle_unadvertise(self, id: MessageId, frm: NodeId) -> list:
        if self.art.remove(id) is None:
            return []
        self.last_hop.pop(id, None)
        return self._flood(Message("UNADV", id, self.id), exclude=frm)

    # -- subscriptions -------------------------------------------------------------

    def handle_subscribe(self, sub: Entry, frm: NodeId, edge: NodeId | None = None) -> list:
        if sub.id in self.srt:
            return []
        if self.forwarding == RENDEZVOUS_MODE:
            return self._subscribe_rendezvous(sub, frm, edge)
        self.srt.insert(sub)
        self.last_hop[sub.id] = frm
        hops = set()
        for ad in self.art.intersecting_entries(sub.filter):
            h = self.last_hop.get(ad.id)
            if h is not None and h != frm and h in self.neighbors:
                hops.add(h)
        self.sent_to[sub.id] = hops
        return [(h, Message("SUB", sub.id, self.id, sub)) for h in sorted(hops)]

    def _subscribe_rendezvous(self, sub: Entry, frm: NodeId, edge) -> list:
        local = frm in self.clients
        self.srt.insert(sub)
        self.last_hop[sub.id] = frm
        self.sub_edge[sub.id] = self.id if local else edge
        root = self.rendezvous
        if local and root is not None and root != self.id:
            return self._direct(root, Message("SUB", sub.id, self.id, sub))
        return []

    def handle_unsubscribe(self, id: MessageId, frm: NodeId) -> list:
        e = self.srt.remove(id)
        if e is None:
            return []
        hop = self.last_hop.pop(id, None)
        if self.forwarding == RENDEZVOUS_MODE:
            edge = self.sub_edge.pop(id, None)
            root = self.rendezvous
            if edge == self.id and hop in self.clients and root is not None and root != self.id:
                return self._direct(root, Message("UNSUB", id, self.id))
            return []
        hops = self.sent_to.pop(id, set())
        return [(h, Message("UNSUB", id, self.id)) for h in sorted(hops) if h != frm]

    # -- publications ------------------------------------------------------------------

    def handle_publish(self, msg: Message, frm: NodeId) -> list:
        p = msg.body
        producer = msg.id.source
        if frm in self.clients and frm == producer:
            md = self.local_meta.get(producer)
            p = apply_publication_policies(
                self.store.pub_policies.values(), p, md.attrs if md else None
            )
            if not any(match_filter(a.filter, p) for a in self.art.entries_by_source(producer)):
                if self.clients[producer].mode == FEEDBACK:
                    self.stats["feedback"] += 1
                    return [(producer, Message("FEEDBACK", msg.id, self.id, p))]
                self.stats["dropped"] += 1
                return []
            self.stats["published"] += 1
        if self.forwarding == RENDEZVOUS_MODE:
            return self.handle_publish_rendezvous(msg.id, p, frm)
        out = []
        by_hop: dict[NodeId, list] = {}
        for e in self.srt.match_publication(p):
            h = self.last_hop.get(e.id)
            if h is not None:
                by_hop.setdefault(h, []).append(e)
        for h in sorted(by_hop):
            if h in self.clients:
                d = Delivery(h, by_hop[h][0].id, p)
                out.append((h, Message("DELIVER", msg.id, self.id, d)))
                self.stats["delivered"] += 1
            elif h in self.neighbors and h != frm:
                out.append((h, Message("PUB", msg.id, self.id, p)))
                self.stats["pub-forward"] += 1
        return out

    def handle_publish_rendezvous(self, pub_id: MessageId, p, frm: NodeId) -> list:
        root = self.rendezvous
        if root is None:
            return self._error(CONTROLLER_ID, f"{self.id}: no rendezvous broker configured")
        if root != self.id:
            self.stats["pub-forward"] += 1
            return self._direct(root, Message("PUB", pub_id, self.id, p))
        by_sub: dict[NodeId, Entry] = {}
        for e in self.srt.match_publication(p):
            by_sub.setdefault(e.source, e)
        out = []
        for subscriber in sorted(by_sub):
            e = by_sub[subscriber]
            edge = self.sub_edge.get(e.id, self.id)
            d = Delivery(subscriber, e.id, p)
            out.extend(self._direct(edge, Message("DELIVER", pub_id, self.id, d)))
        return out

    def _on_deliver(self, msg: Message) -> list:
        d: Delivery = msg.body
        if d.subscriber not in self.clients:
            self.stats["undeliverable"] += 1
            return []
        self.stats["delivered"] += 1
        return [(d.subscriber, Message("DELIVER", msg.id, self.id, d))]

    # -- clients -------------------------------------------------------------------------

    def handle_client_attach(self, c: NodeId, cfg: ClientInfo | None = None) -> None:
        self.clients[c] = cfg or ClientInfo(c.role)

    def handle_client_detach(self, c: NodeId, departing: bool = False) -> list:
        """Withdraw ``c``'s entries.

        A departing owner's policies stay installed and this broker remains
        their owner-side matcher; a migrating owner re-installs them at its new edge.
        """
        if c not in self.clients:
            return []
        out = []
        for e in self.art.entries_by_source(c):
            if self.last_hop.get(e.id) == c:
                out.extend(self.handle_unadvertise(e.id, c))
        for e in self.srt.entries_by_source(c):
            if self.last_hop.get(e.id) == c:
                out.extend(self.handle_unsubscribe(e.id, c))
        del self.clients[c]
        self.local_meta.pop(c, None)
        owned = [pid for pid, p in self.local_policies.items() if p.owner == c]
        if departing and owned:
            self.adopted.add(c)
        else:
            for pid in owned:
                del self.local_policies[pid]
        for key in [k for k in self.applied if k[1] == c]:
            del self.applied[key]
        return out

    def client_entry_count(self, c: NodeId) -> int:
        n = sum(1 for e in self.art.entries_by_source(c) if self.last_hop.get(e.id) == c)
        return n + sum(1 for e in self.srt.entries_by_source(c) if self.last_hop.get(e.id) == c)

    # -- metadata and policies ---------------------------------------------------------------

    def _send_firings(self, firings) -> list:
        out = []
        for f in firings:
            md = f.metadata
            if md.edge is None:
                continue
            b = Bundle(f.policy.id, md.client, md.version, md.attrs,
                       f.policy.actions if f.fire else (), f.fire, f.removed)
            if f.fire:
                self.stats["firings"] += 1
            out.extend(self._direct(md.edge, self._msg("FIRE", b)))
        return out

    def _store_metadata(self, md: Metadata) -> tuple[bool, list]:
        cur = self.store.metadata.get(md.client)
        if cur is not None and cur.version == md.version and cur.edge != md.edge:
            # same metadata from a client that moved edges: firings go to the new edge
            self.store.metadata[md.client] = md
            return True, []
        if cur is not None and cur.version >= md.version:
            return False, []
        return True, self._send_firings(self.store.update_metadata(md))

    def _on_metadata(self, md: Metadata, frm: NodeId) -> list:
        strategy = self.control.strategy
        if frm in self.clients and frm == md.client:
            cur = self.local_meta.get(md.client)
            if cur is not None and cur.version >= md.version:
                return []
            md = replace(md, edge=self.id, role=self.clients[frm].role)
            self.local_meta[md.client] = md
            msg = self._msg("META", md)
            if strategy == RENDEZVOUS and self.rendezvous != self.id:
                return self._direct(self.rendezvous, msg)
            _, out = self._store_metadata(md)
            if strategy == METADATA_FLOOD:
                out = self._flood(msg) + out
            return out
        new, out = self._store_metadata(md)
        if new and strategy == METADATA_FLOOD:
            out = self._flood(self._msg("META", md),
                              exclude=frm) + out
        return out

    def _install(self, pol: Policy, reply_to: NodeId) -> tuple[bool, list]:
        if pol.id in self.store.policies and self.store.policies[pol.id] == pol:
            return False, []
        try:
            return True, self._send_firings(self.store.install_policy(pol))
        except PolicyError as e:
            return False, self._error(reply_to, str(e))

    def _on_policy(self, pol: Policy, frm: NodeId) -> list:
        strategy = self.control.strategy
        if frm in self.clients:
            if pol.owner is None:
                try:
                    pol = pol.with_owner(frm)
                except PolicyError as e:
                    return self._error(frm, str(e))
            if pol.owner != frm:
                return self._error(frm, f"policy {pol.id} owner {pol.owner} is not {frm}")
            if not supports_policy(self.control, pol, self.forwarding):
                return self._error(
                    frm,
                    f"policy {pol.id}: subscription-state conditions are not supported "
                    f"under {strategy} control routing with {self.forwarding} forwarding",
                )
            self.local_policies[pol.id] = pol
            msg = self._msg("POLICY", pol)
            if strategy == RENDEZVOUS and self.rendezvous != self.id:
                return self._direct(self.rendezvous, msg)
            new, out = self._install(pol, frm)
            if new and strategy == POLICY_FLOOD:
                out = self._flood(msg) + out
            return out
        new, out = self._install(pol, CONTROLLER_ID)
        if new and strategy == POLICY_FLOOD:
            out = self._flood(self._msg("POLICY", pol),
                              exclude=frm) + out
        return out

    def _on_unpolicy(self, pid: int, frm: NodeId) -> list:
        strategy = self.control.strategy
        msg = Message("UNPOLICY", self.next_id(), self.id, pid)
        if frm in self.clients:
            owned = self.local_policies.get(pid)
            if owned is None or owned.owner != frm:
                return self._error(frm, f"{frm} does not own policy {pid}")
            del self.local_policies[pid]
            if strategy == RENDEZVOUS and self.rendezvous != self.id:
                return self._direct(self.rendezvous, msg)
        known = pid in self.store.policies
        out = self._send_firings(self.store.remove_policy(pid))
        if known and strategy == POLICY_FLOOD:
            out = self._flood(msg, exclude=frm) + out
        return out

    def _on_pub_policy(self, pol: PublicationPolicy, frm: NodeId) -> list:
        if frm in self.clients:
            if pol.owner is None:
                try:
                    pol = pol.with_owner(frm)
                except PolicyError as e:
                    return self._error(frm, str(e))
            if pol.owner != frm:
                return self._error(frm, f"publication policy {pol.id} owner {pol.owner} is not {frm}")
            self.local_policies[pol.id] = pol
        try:
            new = self.store.install_pub_policy(pol)
        except PolicyError as e:
            return self._error(frm if frm in self.clients else CONTROLLER_ID, str(e))
        if not new:
            return []
        return self._flood(self._msg("PUBPOLICY", pol), exclude=frm)

    def _on_unpub_policy(self, pid: int, frm: NodeId) -> list:
        if frm in self.clients:
            self.local_policies.pop(pid, None)
        if not self.store.remove_pub_policy(pid):
            return []
        return self._flood(Message("UNPUBPOLICY", self.next_id(), self.id, pid), exclude=frm)

    def _on_fire(self, b: Bundle) -> list:
        target = b.target
        if target not in self.clients:
            self.stats["fire-undeliverable"] += 1
            return []
        key = (b.policy_id, target)
        last = self.applied.get(key)
        if b.removed:
            if last is not None and b.version < last[0]:
                return []
            self.applied.pop(key, None)
        else:
            # each metadata version is decided once, whichever matcher re-evaluates it
            if last is not None and b.version <= last[0]:
                return []
            self.applied[key] = (b.version, b.fire)
        kind = AD if target.role == "producer" else SUB
        table = self.art if kind == AD else self.srt
        entries = [e for e in table.entries_by_source(target) if self.last_hop.get(e.id) == target]
        before = self._generated(target, table)
        ops = execute_actions(b.policy_id, b.actions, target, b.metadata, entries, self.diagnostics)
        out = []
        for op in ops:
            if isinstance(op, Retract):
                e = table.get(op.entry_id)
                if e is None:
                    continue
                if e.origin is None:
                    out.append((target, self._msg("NOTICE", op.entry_id)))
                if kind == AD:
                    out.extend(self.handle_unadvertise(op.entry_id, target))
                else:
                    out.extend(self.handle_unsubscribe(op.entry_id, target))
            elif isinstance(op, Insert):
                e = Entry(self.next_id(), target, kind, op.filter, key)
                if kind == AD:
                    out.extend(self.handle_advertise(e, target))
                else:
                    out.extend(self.handle_subscribe(e, target, edge=self.id))
        # keep the target's copy of every (policy, target) state this firing touched
        after = self._generated(target, table)
        for pid in sorted({b.policy_id} | {p for p in before.keys() | after.keys() if before.get(p) != after.get(p)}):
            if pid == b.policy_id:
                g = GenState(pid, 0 if b.removed else b.version, b.fire, after.get(pid, ()))
            else:
                g = GenState(pid, self.applied.get((pid, target), (0,))[0], True, after.get(pid, ()))
            out.append((target, self._msg("STATE", g)))
        return out

    def _generated(self, target: NodeId, table: EntryStore) -> dict:
        found: dict = {}
        for e in sorted(table.entries_by_source(target), key=lambda e: e.id):
            if e.origin is not None and self.last_hop.get(e.id) == target:
                found.setdefault(e.origin[0], []).append((e.kind, e.filter))
        return {pid: tuple(v) for pid, v in found.items()}

    def _on_state(self, g: GenState, frm: NodeId) -> list:
        """Take over policy state a client carried from its previous edge broker."""
        if frm not in self.clients:
            return self._error(frm, "STATE is only accepted from an attached client")
        key = (g.policy_id, frm)
        self.store.outcomes[key] = g.fire
        self.applied[key] = (g.version, g.fire)
        if not g.fire:
            return []
        self.store.fired.add((g.policy_id, frm, g.version))
        out = []
        for kind, f in g.entries:
            e = Entry(self.next_id(), frm, kind, f, key)
            if kind == AD:
                out.extend(self.handle_advertise(e, frm))
            else:
                out.extend(self.handle_subscribe(e, frm, edge=self.id))
        return out

    # -- controller commands ----------------------------------------------------------------

    def handle_control_command(self, cmd: dict) -> list:
        try:
            op = cmd["op"]
            if op == "add-neighbor":
                return self._add_neighbor(NodeId.parse(cmd["neighbor"]))
            if op == "remove-neighbor":
                return self._remove_neighbor(NodeId.parse(cmd["neighbor"]))
            if op == "next-hops":
                table = {NodeId.parse(k): NodeId.parse(v) for k, v in cmd["table"].items()}
                return self._set_next_hops(table)
            if op == "set-rendezvous":
                return self._set_rendezvous(NodeId.parse(cmd["broker"]))
            if op == "migrate-clients":
                to = cmd["to"]
                out = []
                for c in cmd["clients"]:
                    cid = NodeId.parse(c)
                    if cid not in self.clients:
                        continue
                    out.extend(self.handle_client_detach(cid))
                    out.append((cid, self._msg("MIGRATE", {"edge": to, "addr": cmd.get("addr")})))
                return out
            raise ValueError(f"unknown command {op!r}")
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            return self._error(CONTROLLER_ID, f"malformed command {cmd!r}: {e}")

    def _add_neighbor(self, n: NodeId) -> list:
        if n in self.neighbors:
            return []
        self.neighbors.add(n)
        out = [(n, Message("ADV", e.id, self.id, e)) for e in self.art if self.last_hop.get(e.id) != n]
        strategy = self.control.strategy
        if strategy == POLICY_FLOOD:
            for pid in sorted(self.store.policies):
                pol = self.store.policies[pid]
                out.append((n, self._msg("POLICY", pol)))
        if strategy == METADATA_FLOOD:
            for c in sorted(self.store.metadata):
                md = self.store.metadata[c]
                out.append((n, self._msg("META", md)))
        for pid in sorted(self.store.pub_policies):
            pol = self.store.pub_policies[pid]
            out.append((n, self._msg("PUBPOLICY", pol)))
        return out

    def _remove_neighbor(self, n: NodeId) -> list:
        if n not in self.neighbors:
            return []
        self.neighbors.discard(n)
        out = []
        for e in list(self.art):
            if self.last_hop.get(e.id) == n:
                out.extend(self.handle_unadvertise(e.id, n))
        if self.forwarding == ADV_MODE:
            for e in list(self.srt):
                if self.last_hop.get(e.id) == n:
                    out.extend(self.handle_unsubscribe(e.id, n))
            for sent in self.sent_to.values():
                sent.discard(n)
        return out

    def _set_next_hops(self, table: dict) -> list:
        root = self.rendezvous
        moved = root is not None and root != self.id and self.next_hop.get(root) != table.get(root)
        # a broker that left may have swallowed relayed traffic even if our own hop is unchanged
        moved = moved or bool(set(self.next_hop) - set(table))
        self.next_hop = table
        if self.forwarding == RENDEZVOUS_MODE:
            # subscriptions whose edge broker left the overlay can no longer be served
            for e in list(self.srt):
                edge = self.sub_edge.get(e.id)
                if edge is not None and edge != self.id and edge not in table:
                    self.srt.remove(e.id)
                    self.last_hop.pop(e.id, None)
                    self.sub_edge.pop(e.id, None)
        # anything sent toward the root over a link that just died may be lost
        return self._resend_to_root() if moved else []

    def _resend_to_root(self) -> list:
        b = self.rendezvous
        out = []
        if self.forwarding == RENDEZVOUS_MODE and b != self.id:
            for e in self.srt:
                if self.sub_edge.get(e.id) == self.id:
                    out.extend(self._direct(b, Message("SUB", e.id, self.id, e)))
        if self.control.strategy == RENDEZVOUS:
            for c in sorted(self.local_meta):
                md = self.local_meta[c]
                out.extend(self._direct(b, self._msg("META", md)))
            for pid in sorted(self.local_policies):
                pol = self.local_policies[pid]
                if isinstance(pol, Policy):
                    out.extend(self._direct(b, self._msg("POLICY", pol)))
        return out

    def _set_rendezvous(self, b: NodeId) -> list:
        if b == self.rendezvous:
            return []
        self.control = replace(self.control, rendezvous=b)
        if self.forwarding == RENDEZVOUS_MODE:
            for e in list(self.srt):
                if self.sub_edge.get(e.id) != self.id:
                    self.srt.remove(e.id)
                    self.last_hop.pop(e.id, None)
                    self.sub_edge.pop(e.id, None)
        if self.control.strategy == RENDEZVOUS and b != self.id:
            self.store.policies.clear()
            self.store.metadata.clear()
        return self._resend_to_root()

    # -- monitoring ---------------------------------------------------------------------------

    def heartbeat(self) -> Message:
        body = {
            "counts": dict(sorted(self.window.items())),
            "clients": {str(c): self.client_entry_count(c) for c in sorted(self.clients)},
        }
        self.window = Counter()
        return self._msg("HB", body)
