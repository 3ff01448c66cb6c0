import pytest
from hypothesis import given, settings, strategies as st

from support import fuzz_scenario, graph, link, node, scenario, service_doc, vnf
from shiftsim.errors import EmptyQueue, ScenarioInfeasibleAtStart
from shiftsim.placement import check_feasible
from shiftsim.scenario import parse_scenario
from shiftsim.simengine import KIND_ORDER, OUTAGE_STATUS, SimEvent, Simulation, fmt_ms, fmt_number, run


def _single(events=(), duration=120, cpu=10):
    s1 = service_doc("S1", [vnf("A", cpu=2), vnf("B", cpu=2)],
                     [graph(0, ["A", "B"], [("A", "B", 1)]), graph(1, ["B"])])
    return scenario([node("n1", cpu=cpu), node("n2", cpu=cpu)], [link("l", "n1", "n2")], [s1],
                    events, duration=duration)


def test_kind_order():
    assert KIND_ORDER == ("ElementFail", "ElementRecover", "LoadChange", "EnactmentComplete",
                          "MetricTick", "DecisionEpoch", "End")


def test_same_instant_events_follow_kind_order():
    sim = Simulation(_single(), 1, "payoff")
    sim.queue.clear()
    for kind in reversed(KIND_ORDER[:3]):
        sim.push(SimEvent(5.0, kind, "n2" if kind != "LoadChange" else "S1"))
    assert [sim.step().kind for _ in range(3)] == list(KIND_ORDER[:3])


def test_failure_puts_hosted_service_in_outage():
    sim = Simulation(_single([{"t": 10, "kind": "fail", "args": {"element": "n1"}}]), 1, "payoff")
    assert sim.deployments["S1"].placement.vnf_map["A"] == "n1"
    while sim.now_ms < 10_000 or sim.queue[0][0] == 10_000:
        ev = sim.step()
        if ev.kind == "ElementFail":
            break
    assert sim.status["S1"] == OUTAGE_STATUS


def test_empty_queue():
    sim = Simulation(_single(), 1, "payoff")
    sim.queue.clear()
    with pytest.raises(EmptyQueue):
        sim.step()


def test_unknown_event_kind_and_time():
    with pytest.raises(ValueError):
        SimEvent(0.0, "Reboot")
    with pytest.raises(ValueError):
        SimEvent(-1.0, "End")


def test_unknown_policy():
    with pytest.raises(ValueError):
        Simulation(_single(), 1, "greedy")


def test_infeasible_at_start():
    with pytest.raises(ScenarioInfeasibleAtStart):
        Simulation(_single(cpu=1), 1, "payoff")


def test_steady_state_has_no_decisions():
    r = run(_single(duration=600), 3, "payoff")
    assert r.report.decisions == [] and r.report.outage_ms == {"S1": 0}
    assert r.report.level_ms["S1"] == [600_000, 0]
    assert not any(",decision," in line for line in r.events)


def test_seeded_run_is_deterministic():
    sc = parse_scenario("disaster")
    a, b = run(sc, 7, "payoff"), run(sc, 7, "payoff")
    assert a.events == b.events and a.timeseries == b.timeseries and a.summary() == b.summary()


def test_shifting_beats_scale_only_on_see_through():
    sc = parse_scenario("see_through")
    shift, scale = run(sc, 1, "payoff").report, run(sc, 1, "scale_only").report
    assert shift.kpi_violation_s < scale.kpi_violation_s
    assert not any(d for d in scale.decisions)


def _decision_times(result, direction):
    out = []
    for line in result.events:
        t, kind, _, detail = line.split(",", 3)
        if kind == "decision" and f"direction={direction};" in detail + ";":
            out.append(t)
    return out


@pytest.mark.parametrize("seed", range(6))
def test_at_most_one_shift_per_epoch(seed):
    r = run(fuzz_scenario(seed, duration=1800), seed, "payoff")
    for direction in ("down", "up"):
        times = _decision_times(r, direction)
        assert len(times) == len(set(times))


@pytest.mark.parametrize("seed", range(6))
def test_down_shift_only_after_an_alert(seed):
    r = run(fuzz_scenario(seed, duration=1800), seed, "qoe")
    first_alert = next((float(l.split(",")[0]) for l in r.events if ",alert," in l), None)
    for t in _decision_times(r, "down"):
        assert first_alert is not None and float(t) >= first_alert


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), policy=st.sampled_from(["payoff", "qoe", "reaction", "scale_only"]))
def test_feasible_at_rest_and_time_conserved(seed, policy):
    sim = Simulation(fuzz_scenario(seed, duration=1200), seed, policy)
    while not sim.finished:
        sim.step()
        if not sim.active and not sim.migrating:
            bad = check_feasible(sim.deployments.values(), sim.infra).elements
            for sid in sim.order:
                dep = sim.deployments[sid]
                if sim.status[sid] != OUTAGE_STATUS:
                    assert bad.isdisjoint(dep.placement.nodes_used() | dep.placement.links_used())
    r = sim.report()
    for sid in r.services:
        assert sum(r.level_ms[sid]) + r.outage_ms[sid] == r.duration_ms


def test_fmt_number():
    assert fmt_number(0.0) == "0"
    assert fmt_number(3) == "3"
    assert fmt_number(30.0) == "30.0000"
    assert fmt_number(1234567.0) == "1234570"
    assert fmt_number(0.000123456789) == "0.000123457"
    assert fmt_number(float("inf")) == "inf"
    assert "e" not in fmt_number(1e-9)


def test_fmt_ms():
    assert fmt_ms(0) == "0.000" and fmt_ms(1234567) == "1234.567"


def test_epoch_grid():
    r = run(_single(duration=100), 1, "payoff")
    ticks = sorted({float(l.split(",")[0]) for l in r.timeseries})
    assert ticks == [5.0 * i for i in range(20)]
    assert r.events[0].startswith("0.000,start,")
    assert r.events[-1].startswith("100.000,end,")
