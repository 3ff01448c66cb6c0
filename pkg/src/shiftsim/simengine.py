"""Deterministic discrete-event loop: shortage injection, monitoring ticks,
decision epochs, timed enactment and metric accrual.

Simulated time is kept in integer milliseconds so level and outage seconds add
up to the duration exactly.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Dict, List, Optional, Set, Tuple

from .decision import (
    POLICIES,
    ResourceLayer,
    TransitionPlan,
    budget_pressure,
    choose_sla_violation,
    consider_shift_up,
    count_reconfig_ops,
    detect_shortage,
    select_shift_down,
)
from .errors import EmptyQueue, Infeasible, NoCandidate, PlanFailed, RippleExhausted, ScenarioInfeasibleAtStart
from .monitor import RAISED, AlertRule, MetricSample, MonitorState, Subscription, default_subscriptions, dispatch
from .placement import Deployment, _place, check_feasible, evaluate_kpis
from .rng import SplitMix64
from .scenario import Scenario
from .servicemodel import FRACTION_BUDGET, PRIORITY_ORDER, SlaState, sla_allows_downshift
from .topology import DOWN, UP, TOL, apply_status_change, residual_capacity

# same-time events are handled in this order, then by insertion
KIND_ORDER = ("ElementFail", "ElementRecover", "LoadChange", "EnactmentComplete",
              "MetricTick", "DecisionEpoch", "End")
_RANK = {k: i for i, k in enumerate(KIND_ORDER)}

OUTAGE_STATUS = "outage"
DEGRADED_STATUS = "degraded"
OK_STATUS = "ok"
SCALE_GRID = tuple(round(1.0 - 0.05 * i, 2) for i in range(1, 20))

# resource alerts fire once a node or link is over capacity (a failed element
# still hosting demand reports inf) and clear when it is back within capacity
BUILTIN_RULES = (
    AlertRule("link_util", "link_util", fire_threshold=1.000001, clear_threshold=1.0, sustain_samples=3),
    AlertRule("node_cpu", "node_cpu", fire_threshold=1.000001, clear_threshold=1.0, sustain_samples=3),
    AlertRule("node_mem", "node_mem", fire_threshold=1.000001, clear_threshold=1.0, sustain_samples=3),
)


def fmt_number(x: float) -> str:
    """Fixed-decimal rendering with 6 significant digits and no exponent."""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    if x == 0:
        return "0"
    return format(Decimal(f"{x:.5e}"), "f")


def fmt_ms(ms: int) -> str:
    return f"{ms // 1000}.{ms % 1000:03d}"


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


@dataclass(frozen=True)
class SimEvent:
    at: float
    kind: str
    subject: str = ""
    factor: float = 1.0
    periodic: bool = False

    def __post_init__(self):
        if self.kind not in _RANK:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not math.isfinite(self.at) or self.at < 0:
            raise ValueError(f"event time must be finite and >= 0, got {self.at}")


@dataclass(frozen=True)
class EngineConfig:
    epoch_period: float = 30.0
    ripple_depth_limit: int = 2
    shift_up_hysteresis: float = 120.0
    minimum_dwell: float = 120.0
    noise_sigma: float = 0.0
    duration_override: Optional[float] = None
    subscriptions: Optional[Tuple[Subscription, ...]] = None


@dataclass
class MetricsReport:
    duration_ms: int
    services: Tuple[str, ...]
    level_ms: Dict[str, List[int]]
    outage_ms: Dict[str, int]
    degraded_ms: Dict[str, int]
    revenue: Dict[str, float]
    penalties: Dict[str, float]
    secondary_fraction: Dict[str, float]
    sla_ok: Dict[str, bool]
    reconfig_ops: int
    decisions: List[dict] = field(default_factory=list)
    violations: List[dict] = field(default_factory=list)

    @property
    def total_revenue(self) -> float:
        return sum(self.revenue[s] for s in self.services)

    @property
    def total_penalties(self) -> float:
        return sum(self.penalties[s] for s in self.services)

    @property
    def total_outage_s(self) -> float:
        return sum(self.outage_ms.values()) / 1000

    def kpi_violation_ms(self, service_id: str) -> int:
        return self.outage_ms[service_id] + self.degraded_ms[service_id]

    @property
    def kpi_violation_s(self) -> float:
        return sum(self.kpi_violation_ms(s) for s in self.services) / 1000


@dataclass
class RunResult:
    scenario_id: str
    seed: int
    policy: str
    report: MetricsReport
    events: List[str]
    timeseries: List[str]

    def events_text(self) -> str:
        return "".join(line + "\n" for line in self.events)

    def timeseries_text(self) -> str:
        header = "t,service,level,outage,node_util_max,link_util_max\n"
        return header + "".join(line + "\n" for line in self.timeseries)

    def summary(self) -> dict:
        r = self.report
        per_service = []
        for sid in r.services:
            per_service.append({
                "id": sid,
                "level_seconds": [ms / 1000 for ms in r.level_ms[sid]],
                "outage_s": r.outage_ms[sid] / 1000,
                "degraded_s": r.degraded_ms[sid] / 1000,
                "kpi_violation_s": r.kpi_violation_ms(sid) / 1000,
                "secondary_fraction": round(r.secondary_fraction[sid], 9),
                "sla_ok": r.sla_ok[sid],
                "revenue": round(r.revenue[sid], 9),
                "penalties": round(r.penalties[sid], 9),
            })
        return {
            "scenario": self.scenario_id,
            "seed": self.seed,
            "policy": self.policy,
            "duration_s": r.duration_ms / 1000,
            "total_revenue": round(r.total_revenue, 9),
            "total_penalties": round(r.total_penalties, 9),
            "total_outage_s": r.total_outage_s,
            "kpi_violation_s": r.kpi_violation_s,
            "reconfig_ops": r.reconfig_ops,
            "per_service": per_service,
        }


@dataclass
class _ActivePlan:
    plan_id: int
    plan: TransitionPlan
    pending: Set[int]
    kind: str


class ServiceView:
    """What the service layer may ask the resource layer: trial plans and
    whether a service is broken. Residual capacity is deliberately absent."""

    def __init__(self, layer: ResourceLayer):
        self._layer = layer

    def trial_plan(self, service_id, from_level, to_level, ripple=True, scale=None):
        return self._layer.trial_plan(service_id, from_level, to_level, ripple=ripple, scale=scale)

    def is_broken(self, service_id) -> bool:
        return self._layer.is_broken(service_id)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int, policy: str, config: Optional[EngineConfig] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        self.scenario = scenario
        self.seed = seed
        self.policy = policy
        self.config = config or EngineConfig()
        duration = self.config.duration_override or scenario.duration
        self.duration_ms = to_ms(duration)
        self.rng = SplitMix64(seed)
        self.noise_rng = SplitMix64(seed ^ 0x5DEECE66D)
        self.services = {s.service_id: s for s in scenario.services}
        self.order = tuple(s.service_id for s in scenario.services)
        self.infra = scenario.infra
        self.delays = scenario.delays
        rules = list(BUILTIN_RULES) + [r for s in scenario.services for r in s.alert_rules]
        self.monitor = MonitorState(rules)
        self.subscriptions = list(self.config.subscriptions or default_subscriptions())
        self.sla = SlaState({sid: s.sla.window for sid, s in self.services.items()})

        self.now_ms = 0
        self.queue: list = []
        self._seq = 0
        self.events: List[str] = []
        self.timeseries: List[str] = []
        self.deployments: Dict[str, Deployment] = {}
        self.active: Dict[str, _ActivePlan] = {}
        self.migrating: Dict[str, int] = {}
        self.status: Dict[str, str] = {}
        self.scaled_since: Dict[str, int] = {}
        self.version = 0
        self._status_cache: Tuple[int, Dict[str, str]] = (-1, {})
        self._util_cache: Tuple[int, dict] = (-1, {})
        self._tick_mark: Optional[Tuple[int, int]] = None
        self._epoch_at: Optional[int] = None
        self._next_plan = 0
        self.reconfig_ops = 0

        self.level_ms = {sid: [0] * len(s.graphs) for sid, s in self.services.items()}
        self.outage_ms = {sid: 0 for sid in self.order}
        self.degraded_ms = {sid: 0 for sid in self.order}
        self.peak_fraction = {sid: 0.0 for sid in self.order}
        self.violation_penalties = {sid: 0.0 for sid in self.order}
        self.violated: Set[str] = set()
        self.budget_logged: Set[str] = set()
        self.decisions: List[dict] = []
        self.violations: List[dict] = []
        self.finished = False

        self._log("start", scenario.scenario_id, seed=seed, policy=policy, duration=fmt_ms(self.duration_ms))
        self._deploy_initial()
        for ev in scenario.events:
            kind = {"fail": "ElementFail", "recover": "ElementRecover", "load": "LoadChange"}[ev.kind]
            args = dict(ev.args)
            subject = args.get("element", args.get("service", ""))
            if to_ms(ev.t) < self.duration_ms:
                self.push(SimEvent(ev.t, kind, subject, float(args.get("factor", 1.0))))
        self.push(SimEvent(0.0, "MetricTick", periodic=True))
        self.push(SimEvent(0.0, "DecisionEpoch", periodic=True))
        self.push(SimEvent(self.duration_ms / 1000, "End"))
        self._refresh_status()

    # --- plumbing -----------------------------------------------------------

    def push(self, event: SimEvent, at_ms: Optional[int] = None) -> None:
        at_ms = to_ms(event.at) if at_ms is None else at_ms
        heapq.heappush(self.queue, (at_ms, _RANK[event.kind], self._seq, event))
        self._seq += 1

    def _log(self, kind: str, subject: str, **detail) -> None:
        parts = []
        for k, v in detail.items():
            if isinstance(v, (list, tuple)):
                v = "|".join(fmt_number(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = fmt_number(v)
            parts.append(f"{k}={v}")
        self.events.append(f"{fmt_ms(self.now_ms)},{kind},{subject or '-'},{';'.join(parts)}")

    def _deploy_initial(self) -> None:
        residual = residual_capacity(self.infra, [])
        for sid in self.order:
            spec = self.services[sid]
            graph = spec.graph(0)
            try:
                placement, residual = _place(graph, spec.vnf_catalog, self.infra, residual, None, 1.0)
            except Infeasible:
                raise ScenarioInfeasibleAtStart(sid) from None
            if not evaluate_kpis(placement, graph, spec.vnf_catalog, self.infra).satisfied:
                raise ScenarioInfeasibleAtStart(sid)
            self.deployments[sid] = Deployment(spec, 0, placement)
            self._log("deploy", sid, level=0,
                      nodes=[f"{v}@{placement.vnf_map[v]}" for v in graph.topo_order])

    def _layer(self) -> ResourceLayer:
        busy = set(self.active) | set(self.migrating)
        return ResourceLayer(self.infra, self.deployments, busy=busy,
                             depth_limit=self.config.ripple_depth_limit, delays=self.delays)

    @property
    def busy(self) -> Set[str]:
        return set(self.active) | set(self.migrating)

    # --- status and accrual -------------------------------------------------

    def _compute_status(self) -> Dict[str, str]:
        if self._status_cache[0] == self.version:
            return self._status_cache[1]
        bad = check_feasible(self.deployments.values(), self.infra).elements
        out = {}
        for sid in self.order:
            dep = self.deployments[sid]
            broken = bool(bad & (dep.placement.nodes_used() | dep.placement.links_used()))
            kpi_ok = evaluate_kpis(dep.placement, dep.graph, dep.service.vnf_catalog, self.infra).satisfied
            if sid in self.active or broken or not kpi_ok or dep.scale < 1.0 - TOL:
                out[sid] = OUTAGE_STATUS
            elif sid in self.migrating:
                out[sid] = DEGRADED_STATUS
            else:
                out[sid] = OK_STATUS
        self._status_cache = (self.version, out)
        return out

    def _refresh_status(self) -> None:
        new = self._compute_status()
        for sid in self.order:
            if new[sid] != self.status.get(sid):
                self._log("state", sid, status=new[sid], level=self.deployments[sid].level)
        self.status = new

    def _advance(self, to_ms_: int) -> None:
        dt = to_ms_ - self.now_ms
        if dt < 0:
            raise RuntimeError("time went backwards")
        if dt:
            t0, t1 = self.now_ms / 1000, to_ms_ / 1000
            for sid in self.order:
                level = self.deployments[sid].level
                st = self.status[sid]
                if st == OUTAGE_STATUS:
                    self.outage_ms[sid] += dt
                else:
                    self.level_ms[sid][level] += dt
                    if st == DEGRADED_STATUS:
                        self.degraded_ms[sid] += dt
                self.sla.record(sid, level, t0, t1)
                frac = self.sla.secondary_seconds(sid, t1) / self.sla.window(sid)
                self.peak_fraction[sid] = max(self.peak_fraction[sid], frac)
        self.now_ms = to_ms_

    # --- event loop ---------------------------------------------------------

    def step(self) -> SimEvent:
        if not self.queue:
            raise EmptyQueue("no pending events")
        at_ms, _, _, event = heapq.heappop(self.queue)
        self._advance(at_ms)
        handler = getattr(self, f"_on_{event.kind}")
        handler(event)
        if event.kind != "End":
            self._refresh_status()
        return event

    def run(self) -> RunResult:
        while not self.finished:
            self.step()
        return RunResult(self.scenario.scenario_id, self.seed, self.policy, self.report(), self.events,
                         self.timeseries)

    def _on_ElementFail(self, ev: SimEvent) -> None:
        self.infra = apply_status_change(self.infra, ev.subject, DOWN)
        self._log("fail", ev.subject)
        self.version += 1
        self.push(SimEvent(ev.at, "MetricTick"), self.now_ms)

    def _on_ElementRecover(self, ev: SimEvent) -> None:
        self.infra = apply_status_change(self.infra, ev.subject, UP)
        self._log("recover", ev.subject)
        self.version += 1
        self.push(SimEvent(ev.at, "MetricTick"), self.now_ms)

    def _on_LoadChange(self, ev: SimEvent) -> None:
        dep = self.deployments[ev.subject]
        self.deployments[ev.subject] = replace(dep, load=ev.factor)
        self._log("load", ev.subject, factor=ev.factor)
        self.version += 1

    def _on_End(self, ev: SimEvent) -> None:
        r = self.report()
        self._log("end", self.scenario.scenario_id, revenue=r.total_revenue, penalties=r.total_penalties,
                  outage_s=r.total_outage_s, reconfig_ops=r.reconfig_ops)
        self.finished = True
        self.queue.clear()

    # --- monitoring ---------------------------------------------------------

    def _utilization(self):
        if self._util_cache[0] == self.version:
            return self._util_cache[1]
        cpu, mem, bw = defaultdict(float), defaultdict(float), defaultdict(float)
        for dep in self.deployments.values():
            for node, c, m in dep.node_demands():
                cpu[node] += c
                mem[node] += m
            for lid, b in dep.link_demands():
                bw[lid] += b
        util = {}
        for nid, node in self.infra.nodes.items():
            if node.is_up:
                util[("node_cpu", nid)] = cpu[nid] / node.cpu_capacity
                util[("node_mem", nid)] = mem[nid] / node.mem_capacity
            else:
                hosting = cpu[nid] > 0 or mem[nid] > 0
                util[("node_cpu", nid)] = util[("node_mem", nid)] = math.inf if hosting else 0.0
        for lid, link in self.infra.links.items():
            if link.is_up:
                util[("link_util", lid)] = bw[lid] / link.bandwidth_capacity
            else:
                util[("link_util", lid)] = math.inf if bw[lid] > 0 else 0.0
        self._util_cache = (self.version, util)
        return util

    def _samples(self) -> List[MetricSample]:
        t = self.now_ms / 1000
        out = [MetricSample(kind, subject, value, t) for (kind, subject), value in sorted(self._utilization().items())]
        bad = check_feasible(self.deployments.values(), self.infra).elements
        for sid in self.order:
            dep = self.deployments[sid]
            if bad & (dep.placement.nodes_used() | dep.placement.links_used()):
                delay = math.inf
            else:
                delay = evaluate_kpis(dep.placement, dep.graph, dep.service.vnf_catalog,
                                      self.infra).end_to_end_delay / dep.scale
            out.append(MetricSample("service_delay", sid, delay, t))
            out.append(MetricSample("app_custom", sid, dep.load, t))
        if self.config.noise_sigma > 0:
            out = [replace(s, value=s.value + self.noise_rng.gauss(0.0, self.config.noise_sigma))
                   if math.isfinite(s.value) else s for s in out]
        return out

    def _on_MetricTick(self, ev: SimEvent) -> None:
        if ev.periodic:
            nxt = self.now_ms + to_ms(self.scenario.sampling_period)
            if nxt < self.duration_ms:
                self.push(SimEvent(nxt / 1000, "MetricTick", periodic=True), nxt)
            self._write_timeseries()
        if self._tick_mark == (self.now_ms, self.version):
            return
        self._tick_mark = (self.now_ms, self.version)
        for sample in self._samples():
            self.monitor.ingest(sample)
        alerts = self.monitor.evaluate(self.now_ms / 1000)
        for a in alerts:
            self._log("alert", a.subject_id, rule=a.rule_id, direction=a.direction, value=float(a.value))
        delivered = dispatch(alerts, self.subscriptions)
        if any(a.direction == RAISED for _, a in delivered) and self._epoch_at != self.now_ms:
            self.push(SimEvent(ev.at, "DecisionEpoch"), self.now_ms)

    def _write_timeseries(self) -> None:
        util = self._utilization()
        node_max = max((v for (k, s), v in util.items() if k == "node_cpu" and self.infra.nodes[s].is_up),
                       default=0.0)
        link_max = max((v for (k, s), v in util.items() if k == "link_util" and self.infra.links[s].is_up),
                       default=0.0)
        status = self._compute_status()
        for sid in self.order:
            self.timeseries.append(",".join([
                fmt_ms(self.now_ms), sid, str(self.deployments[sid].level),
                "1" if status[sid] == OUTAGE_STATUS else "0", fmt_number(node_max), fmt_number(link_max)]))

    # --- enactment ----------------------------------------------------------

    def _start_plan(self, plan: TransitionPlan, kind: str) -> None:
        sid = plan.service_id
        pid = self._next_plan
        self._next_plan += 1
        dep = self.deployments[sid]
        self.deployments[sid] = Deployment(dep.service, plan.to_level, plan.target, dep.load, plan.scale)
        if plan.scale < 1.0 - TOL and dep.scale >= 1.0 - TOL:
            self.scaled_since[sid] = self.now_ms
        elif plan.scale >= 1.0 - TOL:
            self.scaled_since.pop(sid, None)
        for fsid, placement in sorted(plan.foreign.items()):
            fdep = self.deployments[fsid]
            self.deployments[fsid] = replace(fdep, placement=placement)
            self.migrating[fsid] = pid
        ops = count_reconfig_ops(plan)
        self.reconfig_ops += ops
        self._log("plan", sid, id=pid, purpose=kind, from_level=plan.from_level, to_level=plan.to_level,
                  scale=float(plan.scale), ops=ops, removals=list(plan.removals),
                  instantiations=[f"{v}@{n}" for v, n in plan.instantiations],
                  relocations=[f"{v}@{a}>{b}" for v, a, b in plan.relocations],
                  migrations=[f"{m.service_id}/{m.vnf_id}@{m.from_node}>{m.to_node}"
                              for m in plan.ripple_migrations],
                  duration=fmt_ms(plan.duration_ms))
        if not plan.timeline:
            self._finish_plan(sid, pid, plan)
            return
        self.active[sid] = _ActivePlan(pid, plan, {a.action_id for a in plan.timeline}, kind)
        self.version += 1
        for a in plan.timeline:
            at = self.now_ms + a.end_ms
            self.push(SimEvent(at / 1000, "EnactmentComplete", subject=f"{sid}:{pid}:{a.action_id}"), at)

    def _finish_plan(self, sid: str, pid: int, plan: TransitionPlan) -> None:
        self.active.pop(sid, None)
        for fsid in [f for f, p in self.migrating.items() if p == pid]:
            del self.migrating[fsid]
        if plan.to_level != plan.from_level:
            self.sla.set_level(sid, plan.to_level, self.now_ms / 1000)
        if plan.to_level == 0:
            self.budget_logged.discard(sid)
        self._log("plan_done", sid, id=pid, level=plan.to_level)
        self.version += 1

    def _on_EnactmentComplete(self, ev: SimEvent) -> None:
        sid, pid, aid = ev.subject.split(":")
        pid, aid = int(pid), int(aid)
        ap = self.active[sid]
        action = ap.plan.timeline[aid]
        self._log("action_done", sid, plan=pid, action=aid, op=action.kind, target=action.subject,
                  duration=fmt_ms(action.duration_ms))
        ap.pending.discard(aid)
        if not ap.pending:
            self._finish_plan(sid, pid, ap.plan)

    # --- decisions ----------------------------------------------------------

    def _on_DecisionEpoch(self, ev: SimEvent) -> None:
        if ev.periodic:
            nxt = self.now_ms + to_ms(self.config.epoch_period)
            if nxt < self.duration_ms:
                self.push(SimEvent(nxt / 1000, "DecisionEpoch", periodic=True), nxt)
        if self._epoch_at == self.now_ms:
            return
        self._epoch_at = self.now_ms
        assessment = detect_shortage(self.monitor.active(), self.deployments)
        shifted: Set[str] = set()
        if assessment:
            self._repair(assessment)
            if self.policy == "scale_only":
                self._scale_down(assessment)
            else:
                shifted = self._shift_down(assessment)
        if self.policy == "scale_only":
            if not self._any_broken():
                self._restore_scale()
            return
        upped = self._budget_shift_up(shifted)
        if not upped and not shifted and not self._any_broken():
            self._shift_up()

    def _broken(self, layer: ResourceLayer, sids) -> List[str]:
        busy = self.busy
        return [s for s in sids if s not in busy and layer.is_broken(s)]

    def _any_broken(self) -> bool:
        return bool(self._broken(self._layer(), self.order))

    def _try_plan(self, layer, sid, from_level, to_level, ripple, scale=None) -> Optional[TransitionPlan]:
        try:
            return layer.plan(sid, from_level, to_level, ripple=ripple, scale=scale, rng=self.rng)
        except (PlanFailed, RippleExhausted):
            return None

    def _repair(self, assessment) -> None:
        layer = self._layer()
        for sid in self._broken(layer, assessment.affected):
            if sid in self.busy or not layer.is_broken(sid):
                continue
            dep = self.deployments[sid]
            scales = [1.0, None] if dep.scale < 1.0 - TOL else [None]
            for scale in scales:
                plan = self._try_plan(layer, sid, dep.level, dep.level, True, scale)
                if plan is None:
                    continue
                self._log("decision", sid, direction="repair", from_level=dep.level, to_level=dep.level)
                self._start_plan(plan, "repair")
                layer = self._layer()
                break

    def _scale_down(self, assessment) -> None:
        layer = self._layer()
        for sid in self._broken(layer, assessment.affected):
            if sid in self.busy or not layer.is_broken(sid):
                continue
            dep = self.deployments[sid]
            for scale in SCALE_GRID:
                if scale >= dep.scale - TOL:
                    continue
                plan = self._try_plan(layer, sid, dep.level, dep.level, False, scale)
                if plan is None:
                    continue
                self._log("decision", sid, direction="scale", from_level=dep.level, to_level=dep.level, scale=scale)
                self._start_plan(plan, "scale")
                layer = self._layer()
                break

    def _restore_scale(self) -> None:
        layer = self._layer()
        hold = to_ms(self.config.shift_up_hysteresis)
        for sid in self.order:
            dep = self.deployments[sid]
            if dep.scale >= 1.0 - TOL or sid in self.busy:
                continue
            if self.now_ms - self.scaled_since.get(sid, 0) < hold:
                continue
            plan = self._try_plan(layer, sid, dep.level, dep.level, False, 1.0)
            if plan is None:
                continue
            self._log("decision", sid, direction="restore", from_level=dep.level, to_level=dep.level, scale=1.0)
            self._start_plan(plan, "restore")
            return

    def _sla_snapshot(self, now: float) -> dict:
        return {sid: {"level": self.deployments[sid].level,
                      "secondary_s": self.sla.secondary_seconds(sid, now)} for sid in self.order}

    def _shift_down(self, assessment) -> Set[str]:
        layer = self._layer()
        if not self._broken(layer, assessment.affected):
            return set()
        now = self.now_ms / 1000
        snapshot = self._sla_snapshot(now)
        try:
            decision = select_shift_down(self.policy, assessment, self.services, self.sla, self.deployments,
                                         ServiceView(layer), now, busy=self.busy,
                                         minimum_dwell=self.config.minimum_dwell)
        except NoCandidate as exc:
            if not exc.denied:
                return set()
            return self._forced_shift(layer, exc.denied, now, snapshot, assessment)
        sid = decision.service_id
        self.decisions.append({
            "t": now, "policy": self.policy, "chosen": sid, "sla": snapshot,
            "candidates": [{"service": s, "key": k, "from_level": self.deployments[s].level,
                            "ops": _ops_breakdown(decision.plans[s])}
                           for s, k in decision.candidates],
            "denied": list(decision.denied),
        })
        self._log("decision", sid, direction="down", from_level=decision.from_level, to_level=decision.to_level,
                  reason=self.policy, candidates=[f"{s}:{fmt_number(float(k))}" for s, k in decision.candidates],
                  denied=[f"{s}:{r}" for s, r in decision.denied])
        plan = self._try_plan(layer, sid, decision.from_level, decision.to_level, True)
        self._start_plan(plan, "shift")
        self._repair(assessment)
        return {sid}

    def _forced_shift(self, layer, denied, now, snapshot, assessment) -> Set[str]:
        terms = {s: self.services[s].sla for s in denied}
        victim = choose_sla_violation(list(denied), terms)
        breached = self._breached_terms(victim, now)
        dep = self.deployments[victim]
        penalty = terms[victim].violation_penalty
        self.violations.append({
            "t": now, "service": victim, "term": "|".join(breached),
            "deny_set": {s: terms[s].violation_penalty for s in denied},
        })
        self._log("sla_violation", victim, term=breached, penalty=str(penalty),
                  deny_set=[f"{s}:{terms[s].violation_penalty}" for s in denied])
        self._charge(victim)
        self._log("decision", victim, direction="down", from_level=dep.level, to_level=dep.level + 1,
                  reason="sla_violation")
        plan = self._try_plan(layer, victim, dep.level, dep.level + 1, True)
        self._start_plan(plan, "shift")
        self._repair(assessment)
        return {victim}

    def _breached_terms(self, sid: str, now: float) -> List[str]:
        """Every SLA term a down-shift of ``sid`` breaks, not only the first one checked."""
        spec, dwell = self.services[sid], self.config.minimum_dwell
        levels = {s: d.level for s, d in self.deployments.items()}
        out = []
        if sla_allows_downshift(spec, self.sla, now, levels, self.services, dwell).reason == PRIORITY_ORDER:
            out.append(PRIORITY_ORDER)
        if not sla_allows_downshift(spec, self.sla, now, {}, self.services, dwell):
            out.append(FRACTION_BUDGET)
        return out

    def _charge(self, sid: str) -> None:
        penalty = self.services[sid].sla.violation_penalty
        if not self.services[sid].sla.is_safety:
            self.violation_penalties[sid] += float(penalty)
        self.violated.add(sid)

    def _up_blocked(self, sid: str, level: int) -> bool:
        spec = self.services[sid]
        return level == 1 and any(
            p.vertical_id == spec.vertical_id and p.sla.priority > spec.sla.priority
            and self.deployments[pid].level != 0 for pid, p in self.services.items() if pid != sid)

    def _budget_shift_up(self, shifted: Set[str]) -> bool:
        now = self.now_ms / 1000
        # a service whose VNF is only being migrated for another service's ripple
        # may still return; its deployment already holds the committed destination
        pressed = budget_pressure(self.services, self.sla, self.deployments, now, self.config.epoch_period,
                                  busy=set(self.active))
        for sid in pressed:
            if sid in shifted:
                continue
            dep = self.deployments[sid]
            plan = None
            if not self._up_blocked(sid, dep.level):
                plan = self._try_plan(self._layer(), sid, dep.level, dep.level - 1, True)
            if plan is not None:
                self._log("decision", sid, direction="up", from_level=dep.level, to_level=dep.level - 1,
                          reason="budget")
                self._start_plan(plan, "shift")
                return True
            if sid not in self.budget_logged:
                victim = choose_sla_violation([sid], {sid: self.services[sid].sla})
                self.budget_logged.add(victim)
                self.violations.append({"t": now, "service": victim, "term": FRACTION_BUDGET,
                                        "deny_set": {victim: self.services[victim].sla.violation_penalty}})
                self._log("sla_violation", victim, term=FRACTION_BUDGET,
                          penalty=str(self.services[victim].sla.violation_penalty),
                          deny_set=[f"{victim}:{self.services[victim].sla.violation_penalty}"])
                self._charge(victim)
        return False

    def _shift_up(self) -> None:
        layer = self._layer()
        now = self.now_ms / 1000
        ups = consider_shift_up(self.services, self.sla, self.deployments, ServiceView(layer), now,
                                self.config.shift_up_hysteresis, busy=self.busy)
        if not ups:
            return
        d = ups[0]
        plan = self._try_plan(layer, d.service_id, d.from_level, d.to_level, False)
        if plan is None:
            return
        self._log("decision", d.service_id, direction="up", from_level=d.from_level, to_level=d.to_level,
                  reason="recovered",
                  candidates=[f"{u.service_id}:{fmt_number(float(u.candidates[0][1]))}" for u in ups])
        self._start_plan(plan, "shift")

    # --- report -------------------------------------------------------------

    def report(self) -> MetricsReport:
        revenue, penalties, fraction, ok = {}, {}, {}, {}
        for sid in self.order:
            spec = self.services[sid]
            revenue[sid] = sum(ms / 1000 * g.revenue_rate / 3600 for ms, g in zip(self.level_ms[sid], spec.graphs))
            penalties[sid] = self.outage_ms[sid] / 1000 * spec.sla.outage_penalty_rate + self.violation_penalties[sid]
            fraction[sid] = self.peak_fraction[sid]
            slack = self.config.minimum_dwell / spec.sla.window
            ok[sid] = fraction[sid] <= spec.sla.max_secondary_fraction + slack + 1e-9 and sid not in self.violated
        return MetricsReport(self.duration_ms, self.order, {s: list(v) for s, v in self.level_ms.items()},
                             dict(self.outage_ms), dict(self.degraded_ms), revenue, penalties, fraction, ok,
                             self.reconfig_ops, list(self.decisions), list(self.violations))


def _ops_breakdown(plan: TransitionPlan) -> dict:
    return {"removals": len(plan.removals), "instantiations": len(plan.instantiations),
            "relocations": len(plan.relocations), "route_removals": len(plan.route_removals),
            "route_additions": len(plan.route_additions), "ripple_migrations": len(plan.ripple_migrations)}


def run(scenario: Scenario, seed: int, policy: str, config: Optional[EngineConfig] = None) -> RunResult:
    """Simulate ``scenario`` to its end under ``policy``."""
    return Simulation(scenario, seed, policy, config).run()
