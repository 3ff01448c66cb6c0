"""VNF graph embedding: greedy placement, routing, KPI evaluation, feasibility and an exhaustive oracle."""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import Infeasible, InvalidPlacement, OracleTooLarge
from .servicemodel import ServiceSpec, VnfDescriptor, VnfGraph
from .topology import TOL, CapacityView, Infrastructure

Route = Tuple[str, ...]
VLinkKey = Tuple[str, str]


@dataclass
class Placement:
    graph_level: int
    vnf_map: Dict[str, str]
    route_map: Dict[VLinkKey, Route] = field(default_factory=dict)

    def nodes_used(self) -> set:
        return set(self.vnf_map.values())

    def links_used(self) -> set:
        return {l for route in self.route_map.values() for l in route}


@dataclass
class Deployment:
    """A service running one of its graphs.

    ``load`` models traffic growth and ``scale`` the resource cut applied by the
    scale-only baseline; both multiply cpu and bandwidth demand, memory is fixed.
    """

    service: ServiceSpec
    level: int
    placement: Placement
    load: float = 1.0
    scale: float = 1.0

    @property
    def service_id(self) -> str:
        return self.service.service_id

    @property
    def graph(self) -> VnfGraph:
        return self.service.graph(self.level)

    @property
    def multiplier(self) -> float:
        return self.load * self.scale

    def vnf_demand(self, vnf_id: str) -> Tuple[float, float]:
        d = self.service.vnf_catalog[vnf_id]
        return d.cpu_demand * self.multiplier, d.mem_demand

    def node_demands(self) -> Iterator[Tuple[str, float, float]]:
        for vnf in self.graph.topo_order:
            cpu, mem = self.vnf_demand(vnf)
            yield self.placement.vnf_map[vnf], cpu, mem

    def link_demands(self) -> Iterator[Tuple[str, float]]:
        for vl in self.graph.vlinks:
            for lid in self.placement.route_map.get(vl.key, ()):
                yield lid, vl.bw_demand * self.multiplier


@dataclass(frozen=True)
class KpiReport:
    end_to_end_delay: float
    satisfied: bool


@dataclass(frozen=True)
class Violation:
    element_id: str
    kind: str  # cpu | mem | bandwidth | element_down
    amount: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: Tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def elements(self) -> frozenset:
        return frozenset(v.element_id for v in self.violations)


def route_vlink(infra: Infrastructure, residual: CapacityView, src_node: str, dst_node: str,
                bw_demand: float) -> Route:
    """Minimum-latency path with enough residual bandwidth on every link.

    Ties go to fewer hops, then to the lexicographically smaller link-id sequence.
    """
    if not (infra.nodes[src_node].is_up and infra.nodes[dst_node].is_up):
        raise Infeasible(("route", (src_node, dst_node)), f"endpoint of {src_node}->{dst_node} is down")
    if src_node == dst_node:
        return ()
    best = {src_node: (0.0, 0, ())}
    heap = [(0.0, 0, (), src_node)]
    while heap:
        lat, hops, path, node = heapq.heappop(heap)
        if best.get(node) != (lat, hops, path):
            continue
        if node == dst_node:
            return path
        for link in infra.incident(node):
            if residual.bw[link.id] < bw_demand - TOL:
                continue
            nxt = link.other(node)
            if not infra.nodes[nxt].is_up:
                continue
            cand = (lat + link.latency, hops + 1, path + (link.id,))
            if nxt not in best or cand < best[nxt]:
                best[nxt] = cand
                heapq.heappush(heap, cand + (nxt,))
    raise Infeasible(("route", (src_node, dst_node)),
                     f"no path {src_node}->{dst_node} with {bw_demand} Mbps residual bandwidth")


def _place(graph: VnfGraph, catalog: Mapping[str, VnfDescriptor], infra: Infrastructure,
           residual: CapacityView, pinned: Optional[Mapping[str, str]], load: float,
           keep_routes: Optional[Mapping[Tuple[VLinkKey, str, str], Route]] = None,
           ) -> Tuple[Placement, CapacityView]:
    res = residual.copy()
    keep_routes = keep_routes or {}
    pinned = dict(pinned or {})
    vnf_map: Dict[str, str] = {}
    up = infra.up_nodes()
    for vnf in graph.topo_order:
        if vnf in pinned:
            node = pinned[vnf]
            if not infra.nodes[node].is_up:
                raise Infeasible(("vnf", vnf), f"pinned vnf {vnf!r} sits on down node {node!r}")
            vnf_map[vnf] = node
            continue
        d = catalog[vnf]
        cpu, mem = d.cpu_demand * load, d.mem_demand
        fitting = sorted((n for n in up if res.fits(n, cpu, mem)), key=lambda n: (-res.cpu[n], n))
        if not fitting:
            raise Infeasible(("vnf", vnf))
        incoming = [vl for vl in graph.vlinks if vl.dst == vnf and vl.src in vnf_map]
        node = next((n for n in fitting if _reachable(infra, res, vnf_map, incoming, n, load)), None)
        if node is None:
            raise Infeasible(("vlink", incoming[0].key))
        res.take_node(node, cpu, mem)
        vnf_map[vnf] = node
    route_map: Dict[VLinkKey, Route] = {}
    for vl in _vlink_order(graph):
        bw = vl.bw_demand * load
        old = keep_routes.get((vl.key, vnf_map[vl.src], vnf_map[vl.dst]))
        if old is not None and all(infra.links[l].is_up and res.bw[l] >= bw - TOL for l in old):
            res.take_path(old, bw)
            route_map[vl.key] = tuple(old)
            continue
        try:
            path = route_vlink(infra, res, vnf_map[vl.src], vnf_map[vl.dst], bw)
        except Infeasible:
            raise Infeasible(("vlink", vl.key)) from None
        res.take_path(path, bw)
        route_map[vl.key] = path
    return Placement(graph.level, vnf_map, route_map), res


def _reachable(infra: Infrastructure, res: CapacityView, vnf_map, incoming, node: str, load: float) -> bool:
    for vl in incoming:
        try:
            route_vlink(infra, res, vnf_map[vl.src], node, vl.bw_demand * load)
        except Infeasible:
            return False
    return True


def _vlink_order(graph: VnfGraph):
    rank = {v: i for i, v in enumerate(graph.topo_order)}
    return sorted(graph.vlinks, key=lambda vl: (rank[vl.src], rank[vl.dst]))


def place_graph(graph: VnfGraph, catalog: Mapping[str, VnfDescriptor], infra: Infrastructure,
                residual: CapacityView, pinned: Optional[Mapping[str, str]] = None,
                load: float = 1.0) -> Placement:
    """Greedy best-fit embedding of ``graph`` into ``residual``.

    VNFs go in topological order to the up node with the most residual cpu that
    fits them and that their already placed upstream VNFs can reach; pinned VNFs
    keep their node and are assumed already accounted for in ``residual``. Vlinks
    are then routed with :func:`route_vlink`. KPIs are not checked here. Raises
    :class:`Infeasible` naming the first item that does not fit.
    """
    placement, _ = _place(graph, catalog, infra, residual, pinned, load)
    return placement


def evaluate_kpis(placement: Placement, graph: VnfGraph, catalog: Mapping[str, VnfDescriptor],
                  infra: Infrastructure) -> KpiReport:
    missing = [v for v in graph.vnfs if v not in placement.vnf_map]
    if missing:
        raise InvalidPlacement(f"unmapped vnfs {sorted(missing)}")
    # longest path over the DAG: processing delay plus link latency of routed vlinks
    preds = defaultdict(list)
    for vl in graph.vlinks:
        if vl.key not in placement.route_map:
            raise InvalidPlacement(f"vlink {vl.key} has no route")
        lat = sum(infra.links[l].latency for l in placement.route_map[vl.key])
        preds[vl.dst].append((vl.src, lat))
    dist: Dict[str, float] = {}
    for v in graph.topo_order:
        arrive = max((dist[u] + lat for u, lat in preds[v]), default=0.0)
        dist[v] = arrive + catalog[v].proc_delay
    delay = max(dist.values(), default=0.0)
    return KpiReport(delay, delay <= graph.kpi_max_delay + TOL)


def check_feasible(deployments: Iterable[Deployment], infra: Infrastructure) -> FeasibilityReport:
    """Every capacity overload and every placement touching a down element."""
    cpu = defaultdict(float)
    mem = defaultdict(float)
    bw = defaultdict(float)
    touched = set()
    for dep in deployments:
        for node, c, m in dep.node_demands():
            cpu[node] += c
            mem[node] += m
            touched.add(node)
        for vl in dep.graph.vlinks:
            for lid in dep.placement.route_map.get(vl.key, ()):
                bw[lid] += vl.bw_demand * dep.multiplier
                touched.add(lid)
    out: List[Violation] = []
    for nid, node in infra.nodes.items():
        if not node.is_up:
            if nid in touched:
                out.append(Violation(nid, "element_down", cpu[nid]))
            continue
        if cpu[nid] > node.cpu_capacity + TOL:
            out.append(Violation(nid, "cpu", cpu[nid] - node.cpu_capacity))
        if mem[nid] > node.mem_capacity + TOL:
            out.append(Violation(nid, "mem", mem[nid] - node.mem_capacity))
    for lid, link in infra.links.items():
        if not link.is_up:
            if lid in touched:
                out.append(Violation(lid, "element_down", bw[lid]))
        elif bw[lid] > link.bandwidth_capacity + TOL:
            out.append(Violation(lid, "bandwidth", bw[lid] - link.bandwidth_capacity))
    return FeasibilityReport(tuple(out))


# --- exhaustive oracle ------------------------------------------------------


@dataclass
class OptimalConfig:
    levels: Dict[str, Optional[int]]
    placements: Dict[str, Placement]
    revenue_rate: float

    @property
    def deployed(self) -> List[str]:
        return sorted(s for s, lvl in self.levels.items() if lvl is not None)

    @property
    def all_deployed(self) -> bool:
        return all(lvl is not None for lvl in self.levels.values())


def _simple_paths(infra: Infrastructure, src: str, dst: str) -> Iterator[Tuple[List[str], float]]:
    stack = [(src, [], {src}, 0.0)]
    while stack:
        node, links, seen, lat = stack.pop()
        if node == dst:
            yield links, lat
            continue
        for link in infra.links.values():
            if not link.is_up or node not in link.endpoints:
                continue
            nxt = link.other(node)
            if nxt in seen or not infra.nodes[nxt].is_up:
                continue
            stack.append((nxt, links + [link.id], seen | {nxt}, lat + link.latency))


def _oracle_route(infra: Infrastructure, bw_left: Dict[str, float], src: str, dst: str,
                  bw: float) -> Optional[List[str]]:
    if src == dst:
        return []
    best = None
    for links, lat in _simple_paths(infra, src, dst):
        if any(bw_left[l] + TOL < bw for l in links):
            continue
        key = (lat, len(links), links)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def _oracle_size(services: Sequence[ServiceSpec], n_up: int) -> int:
    total = 0
    for combo in itertools.product(*[[None] + list(range(len(s.graphs))) for s in services]):
        k = sum(len(s.graph(l).vnfs) for s, l in zip(services, combo) if l is not None)
        total += n_up ** k
    return total


def exhaustive_oracle(services: Sequence[ServiceSpec], infra: Infrastructure,
                      limit: int = 10 ** 6) -> OptimalConfig:
    """Revenue-optimal choice of graph level (or none) per service by enumeration.

    Every level combination and every VNF-to-node assignment is considered, vlinks
    take the shortest feasible simple path in order and every deployed graph must
    meet its delay bound. Ties prefer more deployed
    services, then lower levels for lexicographically earlier service ids.
    """
    services = sorted(services, key=lambda s: s.service_id)
    up = [n for n, node in infra.nodes.items() if node.is_up]
    size = _oracle_size(services, len(up))
    if size > limit:
        raise OracleTooLarge(f"{size} candidate configurations exceed the limit of {limit}")

    def rank(combo):
        revenue = sum(s.graph(l).revenue_rate for s, l in zip(services, combo) if l is not None)
        deployed = sum(l is not None for l in combo)
        lex = tuple(len(s.graphs) if l is None else l for s, l in zip(services, combo))
        return (-revenue, -deployed, lex)

    combos = sorted(itertools.product(*[[None] + list(range(len(s.graphs))) for s in services]), key=rank)
    for combo in combos:
        found = _oracle_assign(services, combo, infra, up)
        if found is not None:
            levels = {s.service_id: l for s, l in zip(services, combo)}
            revenue = -rank(combo)[0]
            return OptimalConfig(levels, found, revenue)
    raise AssertionError("empty configuration is always feasible")


def _oracle_assign(services, combo, infra: Infrastructure, up: List[str]):
    items = []  # (service index, vnf, cpu, mem)
    for i, (s, l) in enumerate(zip(services, combo)):
        if l is None:
            continue
        for v in sorted(s.graph(l).vnfs):
            d = s.vnf_catalog[v]
            items.append((i, v, d.cpu_demand, d.mem_demand))
    cpu_left = {n: infra.nodes[n].cpu_capacity for n in up}
    mem_left = {n: infra.nodes[n].mem_capacity for n in up}
    assign: List[str] = []

    def leaf():
        bw_left = {l: link.bandwidth_capacity for l, link in infra.links.items()}
        maps: Dict[int, Dict[str, str]] = defaultdict(dict)
        for (i, v, _, _), node in zip(items, assign):
            maps[i][v] = node
        placements = {}
        for i, (s, l) in enumerate(zip(services, combo)):
            if l is None:
                continue
            g = s.graph(l)
            routes = {}
            for vl in g.vlinks:
                path = _oracle_route(infra, bw_left, maps[i][vl.src], maps[i][vl.dst], vl.bw_demand)
                if path is None:
                    return None
                for lid in path:
                    bw_left[lid] -= vl.bw_demand
                routes[vl.key] = tuple(path)
            placement = Placement(l, dict(maps[i]), routes)
            if not evaluate_kpis(placement, g, s.vnf_catalog, infra).satisfied:
                return None
            placements[s.service_id] = placement
        return placements

    def dfs(k):
        if k == len(items):
            return leaf()
        _, _, c, m = items[k]
        for n in up:
            if cpu_left[n] + TOL < c or mem_left[n] + TOL < m:
                continue
            cpu_left[n] -= c
            mem_left[n] -= m
            assign.append(n)
            got = dfs(k + 1)
            assign.pop()
            cpu_left[n] += c
            mem_left[n] += m
            if got is not None:
                return got
        return None

    return dfs(0)
