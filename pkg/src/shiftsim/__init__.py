"""Service shifting simulator for sliced NFV networks.

Services run one of several ranked VNF graphs. Under resource shortage a
two-layer decision engine shifts services to cheaper graphs instead of scaling
them down, and shifts them back once resources return.
"""

from .decision import (
    PolicyConfig,
    ShiftDecision,
    ShortageAssessment,
    TransitionPlan,
    choose_sla_violation,
    consider_shift_up,
    count_reconfig_ops,
    detect_shortage,
    plan_transition,
    resolve_ripple,
    select_shift_down,
)
from .delays import DelayConfig, sample_delay
from .placement import Deployment, Placement, check_feasible, evaluate_kpis, exhaustive_oracle, place_graph, route_vlink
from .rng import SplitMix64
from .scenario import Scenario, emit, parse_scenario
from .simengine import EngineConfig, MetricsReport, RunResult, SimEvent, Simulation, run
from .topology import Infrastructure, apply_status_change, build_infrastructure, residual_capacity

__all__ = [
    "PolicyConfig", "ShiftDecision", "ShortageAssessment", "TransitionPlan", "choose_sla_violation",
    "consider_shift_up", "count_reconfig_ops", "detect_shortage", "plan_transition",
    "resolve_ripple", "select_shift_down", "DelayConfig", "sample_delay", "Deployment", "Placement",
    "check_feasible", "evaluate_kpis", "exhaustive_oracle", "place_graph", "route_vlink",
    "SplitMix64", "Scenario", "emit", "parse_scenario", "EngineConfig", "MetricsReport",
    "RunResult", "SimEvent", "Simulation", "run", "Infrastructure", "apply_status_change",
    "build_infrastructure", "residual_capacity",
]

__version__ = "0.1.0"
