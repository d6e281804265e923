"""Where metadata and policies go, and which broker fires each (policy, target) pair."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Optional, Protocol

from .model import NodeId
from .policy import Metadata, Policy

METADATA_FLOOD = "metadata-flood"
POLICY_FLOOD = "policy-flood"
RENDEZVOUS = "rendezvous"
STRATEGIES = (METADATA_FLOOD, POLICY_FLOOD, RENDEZVOUS)


class Topology(Protocol):
    def broker_ids(self) -> list[NodeId]: ...

    def edge_of(self, client: NodeId) -> Optional[NodeId]: ...


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = POLICY_FLOOD
    rendezvous: Optional[NodeId] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown control routing strategy {self.strategy!r}")


def destinations_for_metadata(cfg: StrategyConfig, md: Metadata, topology: Topology) -> set:
    edge = md.edge or topology.edge_of(md.client)
    if cfg.strategy == METADATA_FLOOD:
        return set(topology.broker_ids())
    if cfg.strategy == POLICY_FLOOD:
        return {edge} if edge is not None else set()
    return {cfg.rendezvous}


def destinations_for_policy(cfg: StrategyConfig, pol: Policy, topology: Topology) -> set:
    edge = topology.edge_of(pol.owner) if pol.owner is not None else None
    if cfg.strategy == POLICY_FLOOD:
        return set(topology.broker_ids())
    if cfg.strategy == METADATA_FLOOD:
        return {edge} if edge is not None else set()
    return {cfg.rendezvous}


def designated_matcher(cfg: StrategyConfig, pol: Policy, target: NodeId, topology: Topology):
    if cfg.strategy == METADATA_FLOOD:
        return topology.edge_of(pol.owner)
    if cfg.strategy == POLICY_FLOOD:
        return topology.edge_of(target)
    return cfg.rendezvous


def is_designated(cfg: StrategyConfig, broker: NodeId, pol: Policy, md: Metadata,
                  local_clients) -> bool:
    """Broker-local form of :func:`designated_matcher`."""
    if cfg.strategy == METADATA_FLOOD:
        return pol.owner in local_clients
    if cfg.strategy == POLICY_FLOOD:
        return md.client in local_clients
    return broker == cfg.rendezvous


def supports_policy(cfg: StrategyConfig, pol: Policy, forwarding: str = "adv") -> bool:
    """Subscription-state conditions need a matcher that sees every subscription of the target.

    That holds at the target's edge broker (policy flooding) and at a
    rendezvous broker that also receives every subscription.
    """
    if not pol.uses_sub_state:
        return True
    if cfg.strategy == POLICY_FLOOD:
        return True
    return cfg.strategy == RENDEZVOUS and forwarding == "rendezvous"


def verify_quorum(
    cfg: StrategyConfig,
    topology: Topology,
    policies: Iterable[Policy],
    metadata: Iterable[Metadata],
    placement: Mapping[NodeId, tuple] | None = None,
) -> bool:
    """True iff every (policy, metadata) pair co-resides on some broker.

    With ``placement`` (broker -> (policy ids, metadata clients)) the check
    runs against observed broker stores; otherwise against the destinations
    the strategy prescribes.
    """
    policies, metadata = list(policies), list(metadata)
    if placement is None:
        placement = {}
        for b in topology.broker_ids():
            placement[b] = (set(), set())
        for pol in policies:
            for b in destinations_for_policy(cfg, pol, topology):
                placement.setdefault(b, (set(), set()))[0].add(pol.id)
        for md in metadata:
            for b in destinations_for_metadata(cfg, md, topology):
                placement.setdefault(b, (set(), set()))[1].add(md.client)
    for pol in policies:
        for md in metadata:
            if not any(pol.id in pids and md.client in clients
                       for pids, clients in placement.values()):
                return False
    return True
