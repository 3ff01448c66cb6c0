"""Vertical services as ranked families of VNF graphs, SLA terms and SLA accounting."""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from .errors import (
    CyclicGraph,
    DuplicateId,
    MissingPrimary,
    NegativeInterval,
    NonMonotoneUtility,
    OverlappingInterval,
    UnknownPeer,
    UnknownVnf,
    ValidationError,
)

SAFETY = "SAFETY"
OUTAGE = -1
DEFAULT_MINIMUM_DWELL = 120.0
TOL_SECONDS = 1e-9

Penalty = Union[float, str]


@dataclass(frozen=True)
class VnfDescriptor:
    vnf_id: str
    cpu_demand: float
    mem_demand: float
    proc_delay: float


@dataclass(frozen=True)
class VLink:
    src: str
    dst: str
    bw_demand: float

    @property
    def key(self) -> Tuple[str, str]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class VnfGraph:
    level: int
    utility: float
    revenue_rate: float
    vnfs: FrozenSet[str]
    vlinks: Tuple[VLink, ...]
    kpi_max_delay: float
    topo_order: Tuple[str, ...] = ()

    def vlink(self, src: str, dst: str) -> VLink:
        for vl in self.vlinks:
            if vl.src == src and vl.dst == dst:
                return vl
        raise KeyError((src, dst))


@dataclass(frozen=True)
class SlaTerms:
    priority: int
    max_secondary_fraction: float
    window: float
    violation_penalty: Penalty
    outage_penalty_rate: float

    @property
    def is_safety(self) -> bool:
        return self.violation_penalty == SAFETY


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    vertical_id: str
    popularity: int
    vnf_catalog: Mapping[str, VnfDescriptor]
    graphs: Tuple[VnfGraph, ...]
    sla: SlaTerms
    alert_rules: tuple = ()

    @property
    def deepest_level(self) -> int:
        return len(self.graphs) - 1

    def graph(self, level: int) -> VnfGraph:
        return self.graphs[level]

    def __hash__(self):
        return hash(self.service_id)


def _topo_order(vnfs, vlinks, where: str) -> Tuple[str, ...]:
    succ = defaultdict(list)
    indeg = {v: 0 for v in vnfs}
    for vl in vlinks:
        succ[vl.src].append(vl.dst)
        indeg[vl.dst] += 1
    ready = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != len(indeg):
        stuck = sorted(v for v in indeg if v not in order)
        raise CyclicGraph(f"{where}: vlinks form a cycle through {stuck}", where)
    return tuple(order)


def _penalty(raw) -> Penalty:
    if raw == SAFETY:
        return SAFETY
    value = float(raw)
    if value < 0:
        raise ValidationError(f"negative violation penalty {value}")
    return value


def validate_service(raw: Mapping) -> ServiceSpec:
    """Build a ServiceSpec from a scenario-style service mapping.

    Graphs are returned ordered by level with a deterministic topological order
    (lexicographic among ready VNFs). ``alert_rules`` are left to the caller.
    """
    sid = str(raw["id"])
    catalog: Dict[str, VnfDescriptor] = {}
    for v in raw["vnfs"]:
        vid = str(v["id"])
        if vid in catalog:
            raise DuplicateId(f"{sid}: duplicate vnf id {vid!r}", vid)
        cpu, mem, proc = float(v["cpu"]), float(v["mem"]), float(v["proc_ms"])
        if cpu <= 0 or mem <= 0:
            raise ValidationError(f"{sid}: vnf {vid!r} needs positive cpu and mem", vid)
        if proc < 0:
            raise ValidationError(f"{sid}: vnf {vid!r} has negative processing delay", vid)
        catalog[vid] = VnfDescriptor(vid, cpu, mem, proc)

    graphs: Dict[int, VnfGraph] = {}
    for g in raw["graphs"]:
        level = int(g["level"])
        where = f"{sid} level {level}"
        if level in graphs:
            raise DuplicateId(f"{where}: duplicate graph level", str(level))
        vnfs = [str(v) for v in g["vnfs"]]
        if len(set(vnfs)) != len(vnfs):
            raise DuplicateId(f"{where}: vnf listed twice")
        for v in vnfs:
            if v not in catalog:
                raise UnknownVnf(f"{where}: vnf {v!r} not in catalog", v)
        vlinks = []
        for e in g.get("vlinks", []):
            vl = VLink(str(e["src"]), str(e["dst"]), float(e["bw"]))
            for end in (vl.src, vl.dst):
                if end not in vnfs:
                    raise UnknownVnf(f"{where}: vlink endpoint {end!r} not in graph", end)
            if vl.src == vl.dst:
                raise CyclicGraph(f"{where}: self-loop on {vl.src!r}", vl.src)
            if vl.bw_demand < 0:
                raise ValidationError(f"{where}: negative bandwidth on {vl.key}")
            if any(o.key == vl.key for o in vlinks):
                raise DuplicateId(f"{where}: duplicate vlink {vl.key}")
            vlinks.append(vl)
        utility, revenue = float(g["utility"]), float(g["revenue_per_h"])
        if utility <= 0:
            raise ValidationError(f"{where}: utility must be positive")
        kpi = float(g["kpi_max_delay_ms"])
        order = _topo_order(sorted(vnfs), vlinks, where)
        graphs[level] = VnfGraph(level, utility, revenue, frozenset(vnfs), tuple(vlinks), kpi, order)

    if not graphs:
        raise MissingPrimary(f"{sid}: no graphs", sid)
    if 0 not in graphs:
        raise MissingPrimary(f"{sid}: no level-0 graph", sid)
    levels = sorted(graphs)
    if levels != list(range(len(levels))):
        raise ValidationError(f"{sid}: graph levels must be consecutive from 0, got {levels}", sid)
    ordered = tuple(graphs[l] for l in levels)
    for shallow, deep in zip(ordered, ordered[1:]):
        if not deep.utility < shallow.utility:
            raise NonMonotoneUtility(
                f"{sid}: utility must strictly decrease with level "
                f"(level {shallow.level}: {shallow.utility}, level {deep.level}: {deep.utility})", sid)
        if deep.revenue_rate > shallow.revenue_rate:
            raise NonMonotoneUtility(f"{sid}: revenue rate increases at level {deep.level}", sid)

    s = raw["sla"]
    sla = SlaTerms(
        priority=int(raw.get("priority", 0)),
        max_secondary_fraction=float(s["max_secondary_fraction"]),
        window=float(s["window_s"]),
        violation_penalty=_penalty(s["violation_penalty"]),
        outage_penalty_rate=float(s["outage_penalty_rate"]),
    )
    if not 0.0 <= sla.max_secondary_fraction <= 1.0:
        raise ValidationError(f"{sid}: max_secondary_fraction outside [0, 1]", sid)
    if sla.window <= 0:
        raise ValidationError(f"{sid}: SLA window must be positive", sid)
    if sla.outage_penalty_rate < 0:
        raise ValidationError(f"{sid}: negative outage penalty rate", sid)
    popularity = int(raw["popularity"])
    if popularity <= 0:
        raise ValidationError(f"{sid}: popularity must be a positive user count", sid)
    return ServiceSpec(sid, str(raw["vertical"]), popularity, catalog, ordered, sla)


def shared_vnfs(a: VnfGraph, b: VnfGraph) -> FrozenSet[str]:
    return a.vnfs & b.vnfs


# --- SLA accounting -------------------------------------------------------


@dataclass
class _Track:
    window: float
    intervals: List[Tuple[float, float, int]] = field(default_factory=list)
    last_end: Optional[float] = None
    level: int = 0
    since: float = 0.0


class SlaState:
    """Rolling-window record of time spent per level (or in outage) for each service."""

    def __init__(self, windows: Mapping[str, float]):
        self._tracks: Dict[str, _Track] = {sid: _Track(float(w)) for sid, w in windows.items()}

    def __contains__(self, service_id: str) -> bool:
        return service_id in self._tracks

    def _track(self, service_id: str) -> _Track:
        try:
            return self._tracks[service_id]
        except KeyError:
            raise UnknownPeer(service_id) from None

    def record(self, service_id: str, level_or_outage: int, t0: float, t1: float) -> None:
        tr = self._track(service_id)
        if t1 < t0:
            raise NegativeInterval(f"interval [{t0}, {t1}] for {service_id!r} has negative length")
        if tr.last_end is not None and t0 < tr.last_end:
            raise OverlappingInterval(
                f"interval [{t0}, {t1}] for {service_id!r} overlaps history ending at {tr.last_end}")
        if t1 == t0:
            return
        tr.last_end = t1
        if tr.intervals and tr.intervals[-1][1] == t0 and tr.intervals[-1][2] == level_or_outage:
            tr.intervals[-1] = (tr.intervals[-1][0], t1, level_or_outage)
        else:
            tr.intervals.append((t0, t1, level_or_outage))
        horizon = t1 - tr.window
        while tr.intervals and tr.intervals[0][1] <= horizon:
            tr.intervals.pop(0)

    def seconds_by_level(self, service_id: str, now: float) -> Dict[int, float]:
        tr = self._track(service_id)
        lo = now - tr.window
        out: Dict[int, float] = defaultdict(float)
        for t0, t1, lvl in tr.intervals:
            a, b = max(t0, lo), min(t1, now)
            if b > a:
                out[lvl] += b - a
        return dict(out)

    def secondary_seconds(self, service_id: str, now: float) -> float:
        return sum(s for lvl, s in self.seconds_by_level(service_id, now).items() if lvl > 0)

    def outage_seconds(self, service_id: str, now: float) -> float:
        return self.seconds_by_level(service_id, now).get(OUTAGE, 0.0)

    def window(self, service_id: str) -> float:
        return self._track(service_id).window

    def current_level(self, service_id: str) -> int:
        return self._track(service_id).level

    def level_since(self, service_id: str) -> float:
        return self._track(service_id).since

    def set_level(self, service_id: str, level: int, since: float) -> None:
        tr = self._track(service_id)
        tr.level, tr.since = level, since


def record_interval(state: SlaState, service: str, level_or_outage: int, t0: float, t1: float) -> SlaState:
    state.record(service, level_or_outage, t0, t1)
    return state


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Verdict(True)
PRIORITY_ORDER = "PriorityOrder"
FRACTION_BUDGET = "FractionBudget"


def sla_allows_downshift(
    spec: ServiceSpec,
    state: SlaState,
    now: float,
    peer_levels: Mapping[str, int],
    peer_specs: Mapping[str, ServiceSpec],
    minimum_dwell: float = DEFAULT_MINIMUM_DWELL,
) -> Verdict:
    """Check the priority-order and secondary-time-budget terms of ``spec``'s SLA.

    ``peer_levels`` maps same-vertical services to their current level; entries for
    other verticals or for ``spec`` itself are ignored.
    """
    for peer_id, level in sorted(peer_levels.items()):
        if peer_id not in peer_specs:
            raise UnknownPeer(peer_id)
        peer = peer_specs[peer_id]
        if peer_id == spec.service_id or peer.vertical_id != spec.vertical_id:
            continue
        if peer.sla.priority < spec.sla.priority and level == 0:
            return Verdict(False, PRIORITY_ORDER)
    window = spec.sla.window
    used = state.secondary_seconds(spec.service_id, now)
    if used + minimum_dwell > spec.sla.max_secondary_fraction * window + TOL_SECONDS:
        return Verdict(False, FRACTION_BUDGET)
    return ALLOW

