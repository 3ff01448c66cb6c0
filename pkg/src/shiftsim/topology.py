"""Physical infrastructure: compute nodes, links, failures and residual capacity."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Tuple

from .errors import (
    DanglingEndpoint,
    DuplicateId,
    InconsistentPlacement,
    NonPositiveCapacity,
    UnknownElement,
    ValidationError,
)

TOL = 1e-9
UP = "up"
DOWN = "down"


@dataclass(frozen=True)
class ComputeNode:
    id: str
    cpu_capacity: float
    mem_capacity: float
    status: str = UP

    @property
    def is_up(self) -> bool:
        return self.status == UP


@dataclass(frozen=True)
class NetLink:
    id: str
    endpoints: Tuple[str, str]
    bandwidth_capacity: float
    latency: float
    status: str = UP

    @property
    def is_up(self) -> bool:
        return self.status == UP

    def other(self, node_id: str) -> str:
        a, b = self.endpoints
        return b if node_id == a else a


@dataclass(frozen=True)
class Infrastructure:
    """Validated node and link set. Links are undirected and share bandwidth."""

    nodes: Mapping[str, ComputeNode]
    links: Mapping[str, NetLink]

    def element(self, element_id: str):
        if element_id in self.nodes:
            return self.nodes[element_id]
        if element_id in self.links:
            return self.links[element_id]
        raise UnknownElement(element_id)

    def is_up(self, element_id: str) -> bool:
        return self.element(element_id).is_up

    def up_nodes(self) -> List[str]:
        return [n for n, node in self.nodes.items() if node.is_up]

    def incident(self, node_id: str) -> List[NetLink]:
        """Up links touching ``node_id``, sorted by id."""
        return [l for l in self.links.values() if l.is_up and node_id in l.endpoints]


def build_infrastructure(spec: Mapping) -> Infrastructure:
    """Build an Infrastructure from ``{"nodes": [...], "links": [...]}``.

    Node entries carry ``id, cpu, mem`` and link entries ``id, a, b, bw, latency_ms``;
    an optional ``status`` defaults to up.
    """
    nodes: Dict[str, ComputeNode] = {}
    for raw in spec.get("nodes", []):
        nid = str(raw["id"])
        if nid in nodes:
            raise DuplicateId(f"duplicate node id {nid!r}", nid)
        cpu, mem = float(raw["cpu"]), float(raw["mem"])
        if cpu <= 0 or mem <= 0:
            raise NonPositiveCapacity(f"node {nid!r} has non-positive capacity", nid)
        nodes[nid] = ComputeNode(nid, cpu, mem, raw.get("status", UP))
    links: Dict[str, NetLink] = {}
    for raw in spec.get("links", []):
        lid = str(raw["id"])
        if lid in links or lid in nodes:
            raise DuplicateId(f"duplicate link id {lid!r}", lid)
        a, b = str(raw["a"]), str(raw["b"])
        for end in (a, b):
            if end not in nodes:
                raise DanglingEndpoint(f"link {lid!r} references unknown node {end!r}", end)
        if a == b:
            raise ValidationError(f"link {lid!r} connects node {a!r} to itself", lid)
        bw, lat = float(raw["bw"]), float(raw["latency_ms"])
        if bw <= 0:
            raise NonPositiveCapacity(f"link {lid!r} has non-positive bandwidth", lid)
        if lat < 0:
            raise ValidationError(f"link {lid!r} has negative latency", lid)
        links[lid] = NetLink(lid, (a, b), bw, lat, raw.get("status", UP))
    for element in list(nodes.values()) + list(links.values()):
        if element.status not in (UP, DOWN):
            raise ValidationError(f"bad status {element.status!r} for {element.id!r}", element.id)
    return Infrastructure(dict(sorted(nodes.items())), dict(sorted(links.items())))


def apply_status_change(infra: Infrastructure, element_id: str, status: str) -> Infrastructure:
    if status not in (UP, DOWN):
        raise ValueError(f"status must be 'up' or 'down', got {status!r}")
    if element_id in infra.nodes:
        nodes = dict(infra.nodes)
        nodes[element_id] = replace(nodes[element_id], status=status)
        return Infrastructure(nodes, infra.links)
    if element_id in infra.links:
        links = dict(infra.links)
        links[element_id] = replace(links[element_id], status=status)
        return Infrastructure(infra.nodes, links)
    raise UnknownElement(element_id)


@dataclass
class CapacityView:
    """Residual cpu/mem per node and bandwidth per link.

    Residuals may go negative (oversubscription after a failure or load surge);
    such elements are listed in ``oversubscribed``.
    """

    cpu: Dict[str, float] = field(default_factory=dict)
    mem: Dict[str, float] = field(default_factory=dict)
    bw: Dict[str, float] = field(default_factory=dict)

    @property
    def oversubscribed(self) -> frozenset:
        bad = {n for n in self.cpu if self.cpu[n] < -TOL or self.mem[n] < -TOL}
        bad.update(l for l, r in self.bw.items() if r < -TOL)
        return frozenset(bad)

    def copy(self) -> "CapacityView":
        return CapacityView(dict(self.cpu), dict(self.mem), dict(self.bw))

    def fits(self, node_id: str, cpu: float, mem: float) -> bool:
        return self.cpu[node_id] >= cpu - TOL and self.mem[node_id] >= mem - TOL

    def take_node(self, node_id: str, cpu: float, mem: float, sign: float = 1.0) -> None:
        self.cpu[node_id] -= sign * cpu
        self.mem[node_id] -= sign * mem

    def take_path(self, path: Iterable[str], bw: float, sign: float = 1.0) -> None:
        for lid in path:
            self.bw[lid] -= sign * bw


def residual_capacity(infra: Infrastructure, deployments: Iterable) -> CapacityView:
    """Capacity minus placed demand for every element; down elements report 0.

    Each deployment must provide ``node_demands()`` yielding ``(node, cpu, mem)``
    and ``link_demands()`` yielding ``(link, bw)``.
    """
    view = CapacityView(
        {n: node.cpu_capacity for n, node in infra.nodes.items()},
        {n: node.mem_capacity for n, node in infra.nodes.items()},
        {l: link.bandwidth_capacity for l, link in infra.links.items()},
    )
    for dep in deployments:
        for node_id, cpu, mem in dep.node_demands():
            if node_id not in view.cpu:
                raise InconsistentPlacement(f"placement references missing node {node_id!r}")
            view.take_node(node_id, cpu, mem)
        for link_id, bw in dep.link_demands():
            if link_id not in view.bw:
                raise InconsistentPlacement(f"placement references missing link {link_id!r}")
            view.bw[link_id] -= bw
    for n, node in infra.nodes.items():
        if not node.is_up:
            view.cpu[n] = view.mem[n] = 0.0
    for l, link in infra.links.items():
        if not link.is_up:
            view.bw[l] = 0.0
    return view
