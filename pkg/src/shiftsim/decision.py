"""Two-layer shifting logic.

The service layer (``detect_shortage``, ``select_shift_down``,
``choose_sla_violation``, ``consider_shift_up``) reasons over alerts, SLA state,
revenue and popularity. Whenever it needs to know whether a graph fits it asks
a resource view for a plan; it never reads residual capacity itself.

The resource layer (``plan_transition``, ``resolve_ripple``, ``ResourceLayer``)
turns shift decisions into break-before-make transition plans.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .delays import DelayConfig, sample_delay_ms
from .errors import Infeasible, NoCandidate, NoServices, PlanFailed, RippleExhausted
from .monitor import RAISED, Alert
from .placement import (
    Deployment,
    FeasibilityReport,
    Placement,
    _place,
    check_feasible,
    evaluate_kpis,
    route_vlink,
)
from .rng import SplitMix64
from .servicemodel import ServiceSpec, SlaState, SlaTerms, sla_allows_downshift
from .topology import CapacityView, Infrastructure, residual_capacity

POLICIES = ("payoff", "qoe", "reaction", "scale_only")
SHIFTING_POLICIES = ("payoff", "qoe", "reaction")


@dataclass(frozen=True)
class PolicyConfig:
    policy: str = "payoff"
    ripple_depth_limit: int = 2
    shift_up_hysteresis: float = 120.0
    minimum_dwell: float = 120.0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.ripple_depth_limit < 0:
            raise ValueError("ripple_depth_limit must be >= 0")


@dataclass(frozen=True)
class ShortageAssessment:
    alerts: Tuple[Alert, ...] = ()
    affected: Tuple[str, ...] = ()
    overloaded: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.affected)


@dataclass(frozen=True)
class Migration:
    service_id: str
    vnf_id: str
    from_node: str
    to_node: str


@dataclass(frozen=True)
class Action:
    action_id: int
    kind: str
    subject: str
    start_ms: int
    duration_ms: int

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.duration_ms


@dataclass
class TransitionPlan:
    service_id: str
    from_level: int
    to_level: int
    target: Placement
    removals: Tuple[str, ...] = ()
    instantiations: Tuple[Tuple[str, str], ...] = ()
    relocations: Tuple[Tuple[str, str, str], ...] = ()
    route_removals: Tuple[Tuple[str, str], ...] = ()
    route_additions: Tuple[Tuple[str, str], ...] = ()
    ripple_migrations: Tuple[Migration, ...] = ()
    foreign: Dict[str, Placement] = field(default_factory=dict)
    scale: float = 1.0
    timeline: Tuple[Action, ...] = ()

    @property
    def duration_ms(self) -> int:
        return max((a.end_ms for a in self.timeline), default=0)

    @property
    def is_empty(self) -> bool:
        return count_reconfig_ops(self) == 0


@dataclass(frozen=True)
class ShiftDecision:
    service_id: str
    from_level: int
    to_level: int
    direction: str
    reason: str = ""
    candidates: Tuple[Tuple[str, float], ...] = ()
    denied: Tuple[Tuple[str, str], ...] = ()
    plan: Optional[TransitionPlan] = field(default=None, compare=False)
    plans: Mapping[str, TransitionPlan] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.direction == "down" and not self.to_level > self.from_level:
            raise ValueError("a down-shift must move to a deeper level")
        if self.direction == "up" and not self.to_level < self.from_level:
            raise ValueError("an up-shift must move to a shallower level")


def instance_id(service_id: str, vnf_id: str, node_id: str) -> str:
    return f"{service_id}/{vnf_id}@{node_id}"


def count_reconfig_ops(plan: TransitionPlan) -> int:
    """Removals, instantiations, route changes and migrations; a relocation of one
    of the service's own VNFs counts once."""
    return (len(plan.removals) + len(plan.instantiations) + len(plan.route_removals)
            + len(plan.route_additions) + len(plan.ripple_migrations) + len(plan.relocations))


# --- resource layer ---------------------------------------------------------


def _credit(dep: Deployment, infra: Infrastructure, res: CapacityView, vnfs: Iterable[str]) -> None:
    for v in vnfs:
        node = dep.placement.vnf_map[v]
        if infra.nodes[node].is_up:
            cpu, mem = dep.vnf_demand(v)
            res.take_node(node, cpu, mem, sign=-1)


def _credit_routes(dep: Deployment, infra: Infrastructure, res: CapacityView, keys=None) -> None:
    for vl in dep.graph.vlinks:
        if keys is not None and vl.key not in keys:
            continue
        for lid in dep.placement.route_map.get(vl.key, ()):
            if infra.links[lid].is_up:
                res.bw[lid] += vl.bw_demand * dep.multiplier


def _schedule(plan: TransitionPlan, delays: DelayConfig, rng: SplitMix64) -> None:
    phase_a = [("vnf_teardown", r) for r in plan.removals]
    phase_a += [("vnf_teardown", instance_id(plan.service_id, v, a)) for v, a, _ in plan.relocations]
    phase_a += [("vm_migrate", instance_id(m.service_id, m.vnf_id, m.from_node)) for m in plan.ripple_migrations]
    phase_b = [("vnf_instantiate", instance_id(plan.service_id, v, n)) for v, n in plan.instantiations]
    phase_b += [("vnf_instantiate", instance_id(plan.service_id, v, b)) for v, _, b in plan.relocations]
    phase_c = [("route_update", f"-{s}>{d}") for s, d in plan.route_removals]
    phase_c += [("route_update", f"+{s}>{d}") for s, d in plan.route_additions]
    actions = []
    start = 0
    for phase in (phase_a, phase_b, phase_c):
        longest = 0
        for kind, subject in phase:
            dur = sample_delay_ms(kind, delays, rng)
            actions.append(Action(len(actions), kind, subject, start, dur))
            longest = max(longest, dur)
        start += longest
    plan.timeline = tuple(actions)


def plan_transition(service: ServiceSpec, from_level: int, to_level: int,
                    deployments: Mapping[str, Deployment], infra: Infrastructure,
                    residual: CapacityView, scale: Optional[float] = None,
                    rng: Optional[SplitMix64] = None, delays: Optional[DelayConfig] = None,
                    ) -> TransitionPlan:
    """Break-before-make plan moving ``service`` from one graph level to another.

    VNFs common to both graphs stay where they are unless their node is down or
    oversubscribed; graph-specific VNFs are placed greedily into ``residual``
    credited with everything the old graph releases. With ``from_level ==
    to_level`` this repairs the current graph (an empty plan when healthy).
    With ``rng`` the plan also gets a timeline sampled from ``delays``.
    """
    sid = service.service_id
    dep = deployments[sid]
    if dep.level != from_level:
        raise PlanFailed(f"{sid} runs level {dep.level}, not {from_level}")
    old_g, new_g = service.graph(from_level), service.graph(to_level)
    new_scale = dep.scale if scale is None else scale
    new_mult = dep.load * new_scale
    old_map = dep.placement.vnf_map
    oversub = residual.oversubscribed

    res = residual.copy()
    kept: Dict[str, str] = {}
    prefer: Dict[str, str] = {}
    for v in sorted(old_g.vnfs):
        node = old_map[v]
        stays = (v in new_g.vnfs and infra.nodes[node].is_up and node not in oversub
                 and new_mult == dep.multiplier)
        if stays:
            kept[v] = node
        else:
            _credit(dep, infra, res, [v])
            if v in new_g.vnfs and infra.nodes[node].is_up:
                prefer[v] = node
    _credit_routes(dep, infra, res)
    credited = res.copy()

    # shared VNFs that only had to be re-checked go back to their node when it fits
    pinned = dict(kept)
    for v, node in sorted(prefer.items()):
        cpu = service.vnf_catalog[v].cpu_demand * new_mult
        mem = service.vnf_catalog[v].mem_demand
        if res.fits(node, cpu, mem):
            res.take_node(node, cpu, mem)
            pinned[v] = node
    # unchanged vlinks between unmoved endpoints keep their old path when it still fits
    keep = {}
    for vl in old_g.vlinks:
        route = dep.placement.route_map.get(vl.key)
        if route is not None:
            keep[(vl.key, old_map[vl.src], old_map[vl.dst])] = route
    try:
        target, _ = _place(new_g, service.vnf_catalog, infra, res, pinned, new_mult, keep)
    except Infeasible as exc:
        raise PlanFailed(f"{sid} level {to_level}: {exc}", context={
            "service": service, "from_level": from_level, "to_level": to_level,
            "scale": scale, "item": exc.item, "credited": credited,
        }) from None

    if not evaluate_kpis(target, new_g, service.vnf_catalog, infra).satisfied:
        raise PlanFailed(f"{sid} level {to_level}: end-to-end delay above the KPI bound", context={
            "service": service, "from_level": from_level, "to_level": to_level,
            "scale": scale, "item": ("kpi", sid), "credited": credited,
        })
    new_map = target.vnf_map
    old_routes = {vl.key: dep.placement.route_map.get(vl.key, ()) for vl in old_g.vlinks}
    new_routes = target.route_map
    plan = TransitionPlan(
        service_id=sid,
        from_level=from_level,
        to_level=to_level,
        target=target,
        removals=tuple(sorted(instance_id(sid, v, old_map[v]) for v in old_g.vnfs - new_g.vnfs)),
        instantiations=tuple(sorted((v, new_map[v]) for v in new_g.vnfs - old_g.vnfs)),
        relocations=tuple(sorted((v, old_map[v], new_map[v]) for v in old_g.vnfs & new_g.vnfs
                                 if old_map[v] != new_map[v])),
        route_removals=tuple(sorted(k for k, r in old_routes.items()
                                    if k not in new_routes or new_routes[k] != r)),
        route_additions=tuple(sorted(k for k, r in new_routes.items()
                                     if k not in old_routes or old_routes[k] != r)),
        scale=new_scale,
    )
    if rng is not None:
        _schedule(plan, delays or DelayConfig(), rng)
    return plan


def _movable(deployments: Mapping[str, Deployment], infra: Infrastructure, exclude) -> List[tuple]:
    out = []
    for sid, dep in sorted(deployments.items()):
        if sid in exclude:
            continue
        for v in dep.graph.topo_order:
            node = dep.placement.vnf_map[v]
            if infra.nodes[node].is_up:
                cpu, mem = dep.vnf_demand(v)
                out.append((sid, v, node, cpu, mem))
    return out


def _migrate(subset, deployments: Mapping[str, Deployment], infra: Infrastructure,
             residual: CapacityView):
    """Find new nodes for every VNF in ``subset`` keeping their owners routable and
    within KPI. Returns ``(destinations, placements)`` or None."""
    res = residual.copy()
    by_service: Dict[str, List[str]] = defaultdict(list)
    for sid, v, node, cpu, mem in subset:
        res.take_node(node, cpu, mem, sign=-1)
        by_service[sid].append(v)
    touched = {}
    for sid, vnfs in by_service.items():
        dep = deployments[sid]
        keys = {vl.key for vl in dep.graph.vlinks if vl.src in vnfs or vl.dst in vnfs}
        touched[sid] = keys
        _credit_routes(dep, infra, res, keys)
    up = infra.up_nodes()
    dest: List[str] = []

    def reroute(r: CapacityView):
        r = r.copy()
        moved = {(sid, v): n for (sid, v, *_), n in zip(subset, dest)}
        placements = {}
        for sid in sorted(by_service):
            dep = deployments[sid]
            vnf_map = {v: moved.get((sid, v), n) for v, n in dep.placement.vnf_map.items()}
            routes = dict(dep.placement.route_map)
            for vl in _ordered_vlinks(dep):
                if vl.key not in touched[sid]:
                    continue
                bw = vl.bw_demand * dep.multiplier
                try:
                    path = route_vlink(infra, r, vnf_map[vl.src], vnf_map[vl.dst], bw)
                except Infeasible:
                    return None
                r.take_path(path, bw)
                routes[vl.key] = path
            placement = Placement(dep.level, vnf_map, routes)
            if not evaluate_kpis(placement, dep.graph, dep.service.vnf_catalog, infra).satisfied:
                return None
            placements[sid] = placement
        return placements

    def go(i: int, r: CapacityView):
        if i == len(subset):
            placements = reroute(r)
            return None if placements is None else (list(dest), placements)
        sid, v, node, cpu, mem = subset[i]
        for n in sorted(up, key=lambda n: (-r.cpu[n], n)):
            if n == node or not r.fits(n, cpu, mem):
                continue
            r2 = r.copy()
            r2.take_node(n, cpu, mem)
            dest.append(n)
            got = go(i + 1, r2)
            dest.pop()
            if got is not None:
                return got
        return None

    return go(0, res)


def _ordered_vlinks(dep: Deployment):
    rank = {v: i for i, v in enumerate(dep.graph.topo_order)}
    return sorted(dep.graph.vlinks, key=lambda vl: (rank[vl.src], rank[vl.dst]))


def resolve_ripple(context: Mapping, deployments: Mapping[str, Deployment], infra: Infrastructure,
                   depth_limit: int, busy: Iterable[str] = (), rng: Optional[SplitMix64] = None,
                   delays: Optional[DelayConfig] = None) -> TransitionPlan:
    """Migrate up to ``depth_limit`` VNFs of other services to make a failed plan fit.

    Subsets of movable VNFs are tried in increasing size, cheapest cpu first; for
    each subset every destination assignment is searched. A subset is skipped
    unless some node could hold the VNF that failed to place once the subset
    leaves it. The first subset after which the plan succeeds wins.
    """
    service: ServiceSpec = context["service"]
    sid = service.service_id
    item = context.get("item", ())
    if depth_limit <= 0 or (item and item[0] == "kpi"):
        raise RippleExhausted(f"{sid}: no ripple possible (depth limit {depth_limit}, failed on {item})")
    from_level, to_level, scale = context["from_level"], context["to_level"], context.get("scale")
    credited: Optional[CapacityView] = context.get("credited")
    need = None
    if item and item[0] == "vnf" and credited is not None:
        dep = deployments[sid]
        mult = dep.load * (dep.scale if scale is None else scale)
        d = service.vnf_catalog[item[1]]
        need = (d.cpu_demand * mult, d.mem_demand)

    movable = _movable(deployments, infra, set(busy) | {sid})
    base = residual_capacity(infra, deployments.values())
    up = infra.up_nodes()
    for k in range(1, min(depth_limit, len(movable)) + 1):
        subsets = sorted(itertools.combinations(movable, k),
                         key=lambda c: (sum(m[3] for m in c), [(m[0], m[1]) for m in c]))
        for subset in subsets:
            if need is not None:
                freed = defaultdict(lambda: [0.0, 0.0])
                for _, _, node, cpu, mem in subset:
                    freed[node][0] += cpu
                    freed[node][1] += mem
                if not any(credited.fits(n, need[0] - freed[n][0], need[1] - freed[n][1]) for n in up):
                    continue
            found = _migrate(subset, deployments, infra, base)
            if found is None:
                continue
            dests, placements = found
            trial = dict(deployments)
            for fsid, placement in placements.items():
                old = deployments[fsid]
                trial[fsid] = Deployment(old.service, old.level, placement, old.load, old.scale)
            try:
                plan = plan_transition(service, from_level, to_level, trial, infra,
                                       residual_capacity(infra, trial.values()), scale=scale)
            except PlanFailed:
                continue
            plan.ripple_migrations = tuple(Migration(m[0], m[1], m[2], n) for m, n in zip(subset, dests))
            plan.foreign = placements
            if rng is not None:
                _schedule(plan, delays or DelayConfig(), rng)
            return plan
    raise RippleExhausted(f"{sid}: no migration of up to {depth_limit} VNFs makes level {to_level} fit")


class ResourceLayer:
    """Planning view over one snapshot of infrastructure and deployments."""

    def __init__(self, infra: Infrastructure, deployments: Mapping[str, Deployment],
                 busy: Iterable[str] = (), depth_limit: int = 2, delays: Optional[DelayConfig] = None):
        self.infra = infra
        self.deployments = dict(deployments)
        self.busy = frozenset(busy)
        self.depth_limit = depth_limit
        self.delays = delays or DelayConfig()
        self._residual: Optional[CapacityView] = None
        self._report: Optional[FeasibilityReport] = None

    @property
    def residual(self) -> CapacityView:
        if self._residual is None:
            self._residual = residual_capacity(self.infra, self.deployments.values())
        return self._residual

    @property
    def report(self) -> FeasibilityReport:
        if self._report is None:
            self._report = check_feasible(self.deployments.values(), self.infra)
        return self._report

    def plan(self, service_id: str, from_level: int, to_level: int, ripple: bool = True,
             scale: Optional[float] = None, rng: Optional[SplitMix64] = None) -> TransitionPlan:
        dep = self.deployments[service_id]
        try:
            return plan_transition(dep.service, from_level, to_level, self.deployments, self.infra,
                                   self.residual, scale=scale, rng=rng, delays=self.delays)
        except PlanFailed as exc:
            if not ripple or not exc.context:
                raise
            return resolve_ripple(exc.context, self.deployments, self.infra, self.depth_limit,
                                  busy=self.busy | {service_id}, rng=rng, delays=self.delays)

    def trial_plan(self, service_id: str, from_level: int, to_level: int, ripple: bool = True,
                   scale: Optional[float] = None) -> Optional[TransitionPlan]:
        try:
            return self.plan(service_id, from_level, to_level, ripple=ripple, scale=scale)
        except (PlanFailed, RippleExhausted):
            return None

    def is_broken(self, service_id: str) -> bool:
        """Placed on a down or overloaded element, or over its delay bound."""
        dep = self.deployments[service_id]
        bad = self.report.elements
        if bad & (dep.placement.nodes_used() | dep.placement.links_used()):
            return True
        return not evaluate_kpis(dep.placement, dep.graph, dep.service.vnf_catalog, self.infra).satisfied


# --- service layer ----------------------------------------------------------

NODE_KINDS = ("node_cpu", "node_mem")


def detect_shortage(notifications: Iterable, deployments: Mapping[str, Deployment]) -> ShortageAssessment:
    """Map raised alerts to the services they hurt.

    ``notifications`` holds alerts or ``(consumer, alert)`` pairs. Node alerts
    affect services hosted on the node, link alerts services routed over the
    link, service alerts the named service.
    """
    alerts = []
    for n in notifications:
        alert = n[1] if isinstance(n, tuple) else n
        if alert.direction == RAISED and alert not in alerts:
            alerts.append(alert)
    hit: Dict[str, set] = defaultdict(set)
    for alert in alerts:
        subject = alert.subject_id
        for sid, dep in deployments.items():
            if alert.source_kind in NODE_KINDS:
                hurt = subject in dep.placement.nodes_used()
            elif alert.source_kind == "link_util":
                hurt = subject in dep.placement.links_used()
            else:
                hurt = subject == sid
            if hurt:
                hit[subject].add(sid)
    affected = sorted(set().union(*hit.values())) if hit else []
    return ShortageAssessment(tuple(alerts), tuple(affected),
                              {e: tuple(sorted(s)) for e, s in sorted(hit.items())})


def _policy_key(policy: str, spec: ServiceSpec, level: int, plan: TransitionPlan) -> float:
    if policy == "payoff":
        return spec.graph(level).revenue_rate - spec.graph(level + 1).revenue_rate
    if policy == "qoe":
        return spec.popularity
    if policy == "reaction":
        return count_reconfig_ops(plan)
    raise ValueError(f"policy {policy!r} does not shift services")


def select_shift_down(policy: str, assessment: ShortageAssessment, services: Mapping[str, ServiceSpec],
                      sla_state: SlaState, deployments: Mapping[str, Deployment], resources, now: float,
                      busy: Iterable[str] = (), minimum_dwell: float = 120.0) -> ShiftDecision:
    """Pick the service to move one level down.

    ``resources`` only needs ``trial_plan``. Affected services are considered
    first, every deployed service if none of those can move. A candidate must be
    idle, have a deeper graph, yield a plan and pass its SLA check. Raises
    :class:`NoCandidate` carrying the plannable services the SLA denied.
    """
    if policy not in SHIFTING_POLICIES:
        raise ValueError(f"policy {policy!r} does not shift services")
    if not services or not deployments:
        raise NoServices("no services to shift")
    busy = set(busy)
    levels = {sid: d.level for sid, d in deployments.items()}

    def stage(pool):
        allowed, denied = [], []
        for sid in sorted(pool):
            if sid in busy or sid not in deployments:
                continue
            spec, level = services[sid], deployments[sid].level
            if level >= spec.deepest_level:
                continue
            plan = resources.trial_plan(sid, level, level + 1, ripple=True)
            if plan is None:
                continue
            verdict = sla_allows_downshift(spec, sla_state, now, levels, services, minimum_dwell)
            if verdict:
                allowed.append((_policy_key(policy, spec, level, plan), sid, plan))
            else:
                denied.append((sid, verdict.reason))
        return allowed, denied

    allowed, denied = stage(assessment.affected)
    if not allowed:
        allowed, wider = stage(deployments)
        denied = denied or wider
    if not allowed:
        raise NoCandidate(denied=tuple(sid for sid, _ in denied))
    allowed.sort(key=lambda c: (c[0], c[1]))
    key, sid, plan = allowed[0]
    level = deployments[sid].level
    return ShiftDecision(sid, level, level + 1, "down", reason=policy,
                         candidates=tuple((s, k) for k, s, _ in allowed),
                         denied=tuple(denied), plan=plan, plans={s: p for _, s, p in allowed})


def choose_sla_violation(candidates: Sequence[str], sla_terms: Mapping[str, SlaTerms]) -> str:
    """The candidate with the cheapest violation penalty; SAFETY services only
    when nothing else is left. Ties go to the smallest id."""
    if not candidates:
        raise NoServices("no candidate SLA to violate")
    pool = [c for c in candidates if not sla_terms[c].is_safety] or list(candidates)
    return min(pool, key=lambda c: (0.0 if sla_terms[c].is_safety else sla_terms[c].violation_penalty, c))


def consider_shift_up(services: Mapping[str, ServiceSpec], sla_state: SlaState,
                      deployments: Mapping[str, Deployment], resources, now: float,
                      hysteresis: float = 120.0, busy: Iterable[str] = ()) -> List[ShiftDecision]:
    """Services that can return one level up, best revenue gain first.

    A service qualifies once it has held its level for ``hysteresis`` seconds and
    the shallower graph fits without moving anyone else. Returning to the
    primary graph also waits until every more important peer of the same vertical
    runs its primary graph.
    """
    busy = set(busy)
    out = []
    for sid in sorted(deployments):
        dep = deployments[sid]
        spec = services[sid]
        level = dep.level
        if level == 0 or sid in busy:
            continue
        if now - sla_state.level_since(sid) < hysteresis:
            continue
        if level == 1 and any(
                p.vertical_id == spec.vertical_id and p.sla.priority > spec.sla.priority
                and pid in deployments and deployments[pid].level != 0
                for pid, p in services.items() if pid != sid):
            continue
        plan = resources.trial_plan(sid, level, level - 1, ripple=False)
        if plan is None:
            continue
        gain = spec.graph(level - 1).revenue_rate - spec.graph(level).revenue_rate
        out.append(ShiftDecision(sid, level, level - 1, "up", reason="recovered",
                                 candidates=((sid, gain),), plan=plan))
    out.sort(key=lambda d: (-d.candidates[0][1], d.service_id))
    return out


def budget_pressure(services: Mapping[str, ServiceSpec], sla_state: SlaState,
                    deployments: Mapping[str, Deployment], now: float, horizon: float,
                    busy: Iterable[str] = ()) -> List[str]:
    """Services on a secondary graph that would exceed their secondary-time budget
    within ``horizon`` seconds."""
    busy = set(busy)
    out = []
    for sid in sorted(deployments):
        if deployments[sid].level == 0 or sid in busy:
            continue
        sla = services[sid].sla
        if sla_state.secondary_seconds(sid, now) + horizon > sla.max_secondary_fraction * sla.window + 1e-9:
            out.append(sid)
    return out
