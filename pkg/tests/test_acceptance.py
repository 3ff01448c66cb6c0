"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a pass/fail line that the conftest prints after the run.
"""

from __future__ import annotations

import itertools
import random
import time
from collections import defaultdict

from conftest import record_acceptance
from support import level_timeline, oracle_instance, scenario, vnf, graph, service_doc, node, link
from shiftsim.cli import write_outputs
from shiftsim.decision import count_reconfig_ops, plan_transition, resolve_ripple
from shiftsim.delays import DelayConfig, sample_delay
from shiftsim.errors import PlanFailed, RippleExhausted
from shiftsim.placement import Deployment, Placement, _place, exhaustive_oracle
from shiftsim.rng import SplitMix64
from shiftsim.scenario import fixture_names, parse_scenario
from shiftsim.servicemodel import SAFETY
from shiftsim.simengine import Simulation, run
from shiftsim.topology import apply_status_change, residual_capacity

POLICIES = ("payoff", "qoe", "reaction", "scale_only")
SHIFTING = ("payoff", "qoe", "reaction")
DWELL = 120.0


def _checked(number, detail, body):
    """Run ``body`` and record the outcome of criterion ``number``."""
    try:
        body()
    except AssertionError as exc:
        record_acceptance(number, False, f"{detail}: {exc}")
        raise
    record_acceptance(number, True, detail)


# --- 1: migration delay range ------------------------------------------------


def test_migration_delay_range():
    start = time.perf_counter()
    rng = SplitMix64(1)
    config = DelayConfig()
    samples = [sample_delay("vm_migrate", config, rng) for _ in range(10_000)]
    elapsed = time.perf_counter() - start
    lo, hi = min(samples), max(samples)

    def body():
        assert lo >= 50.0 and hi <= 270.0, f"range [{lo:.3f}, {hi:.3f}] leaves [50, 270]"
        assert lo <= 52.0 and hi >= 268.0, f"bounds not approached: [{lo:.3f}, {hi:.3f}]"
        assert elapsed < 1.0, f"took {elapsed:.2f} s"

    _checked(1, f"vm_migrate 10000 samples in [{lo:.2f}, {hi:.2f}] s, {elapsed:.3f} s", body)


# --- 2: shifting beats scale-only ---------------------------------------------


def test_shifting_beats_scale_only():
    start = time.perf_counter()
    sc = parse_scenario("see_through")
    rows = []
    for seed in (1, 2, 3):
        reports = {p: run(sc, seed, p).report for p in POLICIES}
        base = reports["scale_only"]
        for p in SHIFTING:
            r = reports[p]
            rows.append((seed, p, r.kpi_violation_s, base.kpi_violation_s, r.total_revenue, base.total_revenue))
    elapsed = time.perf_counter() - start

    def body():
        for seed, p, kv, kv0, rev, rev0 in rows:
            assert kv < kv0, f"seed {seed} {p}: kpi violation {kv} s not below scale_only {kv0} s"
            assert rev > rev0, f"seed {seed} {p}: revenue {rev} not above scale_only {rev0}"
        assert elapsed < 10.0, f"took {elapsed:.2f} s"

    worst = max(rows, key=lambda r: r[2] - r[3])
    _checked(2, f"see_through seeds 1-3: worst shifting kpi violation {worst[2]:.1f} s vs "
                f"scale_only {worst[3]:.1f} s, {elapsed:.2f} s", body)


# --- 3: oracle equivalence ----------------------------------------------------


def _quiescent_outages(sim: Simulation):
    """Services in outage at the last moment no plan was running."""
    quiet = None
    while not sim.finished:
        sim.step()
        if not sim.active and not sim.migrating and not sim.finished:
            quiet = sorted(s for s, st in sim.status.items() if st == "outage")
    return quiet


def test_oracle_equivalence():
    start = time.perf_counter()
    feasible, failures = 0, []
    for seed in range(50):
        sc, victim = oracle_instance(seed)
        after = apply_status_change(sc.infra, victim, "down")
        best = exhaustive_oracle(list(sc.services), after)
        if not best.all_deployed:
            continue
        feasible += 1
        outages = _quiescent_outages(Simulation(sc, seed, "payoff"))
        if outages:
            failures.append((seed, outages))
    elapsed = time.perf_counter() - start

    def body():
        assert not failures, f"services left in outage: {failures}"
        assert elapsed < 60.0, f"took {elapsed:.1f} s"

    _checked(3, f"{feasible} of 50 instances oracle-feasible, {len(failures)} end in outage, {elapsed:.1f} s", body)


# --- 4: policy argmin audit ---------------------------------------------------


def _independent_key(policy, spec, candidate):
    level = candidate["from_level"]
    if policy == "payoff":
        return spec.graph(level).revenue_rate - spec.graph(level + 1).revenue_rate
    if policy == "qoe":
        return float(spec.popularity)
    return float(sum(candidate["ops"].values()))


def _independent_verdict(spec, services, snapshot):
    for peer_id, peer in services.items():
        if peer_id == spec.service_id or peer.vertical_id != spec.vertical_id:
            continue
        if peer.sla.priority < spec.sla.priority and snapshot[peer_id]["level"] == 0:
            return "PriorityOrder"
    used = snapshot[spec.service_id]["secondary_s"]
    if used + DWELL > spec.sla.max_secondary_fraction * spec.sla.window + 1e-9:
        return "FractionBudget"
    return None


def test_policy_argmin_audit(fuzz_corpus):
    audited, problems = 0, []
    for fr in fuzz_corpus:
        services = {s.service_id: s for s in fr.scenario.services}
        for d in fr.result.report.decisions:
            audited += 1
            snap = d["sla"]
            keyed = []
            for c in d["candidates"]:
                spec = services[c["service"]]
                key = _independent_key(fr.policy, spec, c)
                if abs(key - c["key"]) > 1e-9:
                    problems.append((fr.seed, fr.policy, d["t"], c["service"], "key", key, c["key"]))
                if _independent_verdict(spec, services, snap) is not None:
                    problems.append((fr.seed, fr.policy, d["t"], c["service"], "allowed despite SLA"))
                keyed.append((key, c["service"]))
            for sid, reason in d["denied"]:
                if _independent_verdict(services[sid], services, snap) != reason:
                    problems.append((fr.seed, fr.policy, d["t"], sid, "denial", reason))
            if not keyed or min(keyed)[1] != d["chosen"]:
                problems.append((fr.seed, fr.policy, d["t"], d["chosen"], "not argmin", keyed))

    def body():
        assert audited >= 1000, f"only {audited} decisions logged"
        assert not problems, f"{len(problems)} audit failures, first {problems[:3]}"

    _checked(4, f"{audited} shift-down decisions over {len(fuzz_corpus)} runs, {len(problems)} mismatches", body)


# --- 5: SLA invariants ---------------------------------------------------------


def _ms(t: float) -> int:
    return int(round(t * 1000))


def _priority_breaches(fr):
    """Snapshots where a service runs a secondary graph while a less important
    peer of its vertical runs the primary one, and no SLA violation record
    covers it in the current secondary episode."""
    services = {s.service_id: s for s in fr.scenario.services}
    timeline = level_timeline(fr.result.events, list(services))
    violated_at = defaultdict(list)
    for v in fr.result.report.violations:
        violated_at[v["service"]].append(_ms(v["t"]))
    last_primary = {s: 0 for s in services}
    out = []
    for t, levels in timeline:
        for sid, lvl in levels.items():
            if lvl == 0:
                last_primary[sid] = t
        for hi, lo in itertools.permutations(services.values(), 2):
            if hi.vertical_id != lo.vertical_id or lo.sla.priority >= hi.sla.priority:
                continue
            if levels[hi.service_id] > 0 and levels[lo.service_id] == 0:
                start = last_primary[hi.service_id]
                if not any(start <= v <= t for v in violated_at[hi.service_id]):
                    out.append((fr.seed, fr.policy, t, hi.service_id, lo.service_id))
    return out


def _budget_overruns(fr):
    services = {s.service_id: s for s in fr.scenario.services}
    budget_violators = {v["service"] for v in fr.result.report.violations
                        if "FractionBudget" in v["term"].split("|")}
    out = []
    for sid, spec in services.items():
        frac = fr.result.report.secondary_fraction[sid]
        bound = spec.sla.max_secondary_fraction + DWELL / spec.sla.window
        if frac > bound + 1e-9 and sid not in budget_violators:
            out.append((fr.seed, fr.policy, sid, frac, bound))
    return out


def _penalty_not_minimal(fr):
    out = []
    for v in fr.result.report.violations:
        deny = v["deny_set"]
        ordinary = {s: p for s, p in deny.items() if p != SAFETY}
        pool = ordinary or {s: 0.0 for s in deny}
        cheapest = min(pool.values())
        if v["service"] not in pool or pool[v["service"]] != cheapest:
            out.append((fr.seed, fr.policy, v["t"], v["service"], deny))
    return out


def test_sla_invariants(fuzz_corpus):
    breaches, overruns, costly = [], [], []
    n_violations = 0
    for fr in fuzz_corpus:
        breaches += _priority_breaches(fr)
        overruns += _budget_overruns(fr)
        costly += _penalty_not_minimal(fr)
        n_violations += len(fr.result.report.violations)

    def body():
        assert not breaches, f"(a) priority breaches {breaches[:3]}"
        assert not overruns, f"(b) secondary budget overruns {overruns[:3]}"
        assert not costly, f"(c) non-minimal violation victims {costly[:3]}"

    _checked(5, f"{len(fuzz_corpus)} runs, {n_violations} violation records: {len(breaches)} priority breaches, "
                f"{len(overruns)} budget overruns, {len(costly)} non-minimal victims", body)


# --- 6: shared-VNF conservation ------------------------------------------------


class _PlanRecorder(Simulation):
    def __init__(self, *args, **kwargs):
        self.started = []
        super().__init__(*args, **kwargs)

    def _start_plan(self, plan, kind):
        self.started.append((kind, plan, self.deployments[plan.service_id]))
        super()._start_plan(plan, kind)


def _graph_diff_ops(old: Deployment, plan) -> int:
    old_g = old.service.graph(plan.from_level)
    new_g = old.service.graph(plan.to_level)
    ops = len(old_g.vnfs ^ new_g.vnfs)
    ops += sum(old.placement.vnf_map[v] != plan.target.vnf_map[v] for v in old_g.vnfs & new_g.vnfs)
    old_routes = {vl.key: old.placement.route_map[vl.key] for vl in old_g.vlinks}
    new_routes = {vl.key: plan.target.route_map[vl.key] for vl in new_g.vlinks}
    for key in old_routes.keys() | new_routes.keys():
        if key not in new_routes or key not in old_routes:
            ops += 1
        elif old_routes[key] != new_routes[key]:
            ops += 2
    return ops + len(plan.ripple_migrations)


def test_shared_vnf_conservation():
    sim = _PlanRecorder(parse_scenario("sensor_monitoring"), 1, "payoff")
    sim.run()
    shifts = [(plan, old) for kind, plan, old in sim.started
              if kind == "shift" and plan.to_level == plan.from_level + 1]
    plan, old = shifts[0] if shifts else (None, None)

    def body():
        assert plan is not None, "no shift-down plan was started"
        assert len(plan.removals) == 1, f"removals {plan.removals}"
        assert len(plan.instantiations) == 0, f"instantiations {plan.instantiations}"
        assert len(plan.ripple_migrations) == 0, f"ripple migrations {plan.ripple_migrations}"
        assert count_reconfig_ops(plan) == _graph_diff_ops(old, plan)

    detail = "no shift plan" if plan is None else (
        f"removals={list(plan.removals)} instantiations={len(plan.instantiations)} "
        f"ripple={len(plan.ripple_migrations)} ops={count_reconfig_ops(plan)} diff={_graph_diff_ops(old, plan)}")
    _checked(6, detail, body)


# --- 7: conservation and determinism --------------------------------------------


def _outputs(result, tmp_path):
    tmp_path.mkdir(parents=True)
    write_outputs(result, tmp_path)
    return {name: (tmp_path / name).read_bytes() for name in ("summary.json", "events.log", "timeseries.csv")}


def test_conservation_and_determinism(tmp_path):
    combos, leaks, diffs = 0, [], []
    for name in fixture_names():
        sc = parse_scenario(name)
        for policy in POLICIES:
            for seed in (1, 2, 3):
                combos += 1
                first = run(sc, seed, policy)
                r = first.report
                for sid in r.services:
                    total = sum(r.level_ms[sid]) + r.outage_ms[sid]
                    if total != r.duration_ms:
                        leaks.append((name, policy, seed, sid, total, r.duration_ms))
                a = _outputs(first, tmp_path / f"{name}-{policy}-{seed}-a")
                b = _outputs(run(sc, seed, policy), tmp_path / f"{name}-{policy}-{seed}-b")
                diffs += [(name, policy, seed, f) for f in a if a[f] != b[f]]

    def body():
        assert not leaks, f"level + outage != duration: {leaks[:3]}"
        assert not diffs, f"non-identical reruns: {diffs[:3]}"

    _checked(7, f"{combos} fixture x policy x seed runs, {len(leaks)} accounting gaps, "
                f"{len(diffs)} differing files", body)


# --- 8: ripple minimality ---------------------------------------------------------


def _ripple_instance(rng: random.Random):
    """A target service whose node fails, beside up to five foreign VNFs."""
    names = ["n0", "n1", "n2"]
    nodes = [node(n, cpu=rng.randint(3, 8), mem=100) for n in names]
    links = [link(f"l{a}{b}", names[a], names[b], bw=1000) for a, b in ((0, 1), (0, 2), (1, 2))]
    target_vnfs = [vnf(f"t{i}", cpu=rng.randint(2, 4)) for i in range(rng.randint(1, 2))]
    docs = [service_doc("target", target_vnfs, [graph(0, [v["id"] for v in target_vnfs],
                                                       [("t0", "t1", 1)] if len(target_vnfs) == 2 else [])])]
    for k in range(rng.randint(1, 3)):
        fv = [vnf(f"f{i}", cpu=rng.randint(1, 3)) for i in range(rng.randint(1, 2))]
        docs.append(service_doc(f"s{k}", fv, [graph(0, [v["id"] for v in fv],
                                                     [("f0", "f1", 1)] if len(fv) == 2 else [])]))
    try:
        sc = scenario(nodes, links, docs)
    except Exception:
        return None
    infra = sc.infra
    residual = residual_capacity(infra, [])
    deployments = {}
    for spec in sc.services:
        try:
            placement, residual = _place(spec.graph(0), spec.vnf_catalog, infra, residual, None, 1.0)
        except Exception:
            return None
        deployments[spec.service_id] = Deployment(spec, 0, placement)
    dead = deployments["target"].placement.vnf_map["t0"]
    if any(dead in d.placement.nodes_used() for s, d in deployments.items() if s != "target"):
        return None
    infra = apply_status_change(infra, dead, "down")
    return sc.services[0], deployments, infra


def _movable_foreign(deployments, infra):
    return [(sid, v, n) for sid, d in sorted(deployments.items()) if sid != "target"
            for v, n in sorted(d.placement.vnf_map.items()) if infra.nodes[n].is_up]


def _fits_after(subset, dests, deployments, infra):
    """Foreign deployments with ``subset`` moved to ``dests``, or None if a node overflows."""
    trial = dict(deployments)
    for (sid, v, _), n in zip(subset, dests):
        d = trial[sid]
        vnf_map = dict(d.placement.vnf_map)
        vnf_map[v] = n
        trial[sid] = Deployment(d.service, d.level, Placement(d.level, vnf_map, dict(d.placement.route_map)))
    for sid in {s for s, _, _ in subset}:
        d = trial[sid]
        routes = {}
        for vl in d.graph.vlinks:
            a, b = d.placement.vnf_map[vl.src], d.placement.vnf_map[vl.dst]
            shared = [l.id for l in infra.links.values() if set(l.endpoints) == {a, b}]
            routes[vl.key] = tuple(shared[:1])
        trial[sid] = Deployment(d.service, d.level, Placement(d.level, d.placement.vnf_map, routes))
    load = defaultdict(float)
    for d in trial.values():
        for n, cpu, _ in d.node_demands():
            load[n] += cpu
    if any(load[n] > infra.nodes[n].cpu_capacity + 1e-9 for n in infra.up_nodes()):
        return None
    return trial


def _minimum_migrations(service, deployments, infra):
    movable = _movable_foreign(deployments, infra)
    up = infra.up_nodes()
    for k in range(1, len(movable) + 1):
        for subset in itertools.combinations(movable, k):
            for dests in itertools.product(up, repeat=k):
                if any(d == m[2] for d, m in zip(dests, subset)):
                    continue
                trial = _fits_after(subset, dests, deployments, infra)
                if trial is None:
                    continue
                try:
                    plan_transition(service, 0, 0, trial, infra, residual_capacity(infra, trial.values()))
                except PlanFailed:
                    continue
                return k
    return None


def test_ripple_minimality():
    rng = random.Random(20240)
    checked, mismatches, attempts = 0, [], 0
    while checked < 40 and attempts < 5000:
        attempts += 1
        inst = _ripple_instance(rng)
        if inst is None:
            continue
        service, deployments, infra = inst
        movable = _movable_foreign(deployments, infra)
        if not 1 <= len(movable) <= 5:
            continue
        try:
            plan_transition(service, 0, 0, deployments, infra, residual_capacity(infra, deployments.values()))
            continue
        except PlanFailed as exc:
            context = exc.context
        try:
            plan = resolve_ripple(context, deployments, infra, depth_limit=len(movable))
        except RippleExhausted:
            continue
        checked += 1
        best = _minimum_migrations(service, deployments, infra)
        if best != len(plan.ripple_migrations):
            mismatches.append((attempts, len(plan.ripple_migrations), best))

    def body():
        assert checked >= 40, f"only {checked} ripple instances found"
        assert not mismatches, f"(instance, ripple, minimum) {mismatches[:3]}"

    _checked(8, f"{checked} successful ripples, {len(mismatches)} above the enumerated minimum", body)
