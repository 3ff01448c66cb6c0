"""Scenario documents: strict YAML schema, validation and the inverse writer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from .delays import DELAY_KINDS, DelayConfig
from .errors import DuplicateId, ParseError, ValidationError
from .monitor import AlertRule
from .servicemodel import SAFETY, ServiceSpec, validate_service
from .topology import Infrastructure, build_infrastructure

EVENT_KINDS = ("fail", "recover", "load")
DEFAULT_SAMPLING_PERIOD = 5.0
BUILTIN_RULE_IDS = ("node_cpu", "node_mem", "link_util")

# closed schema: a dict maps keys to sub-schemas, a one-element list means
# "list of", None is a scalar. Keys ending in "?" are optional.
_RULE = {"id": None, "kind": None, "subjects?": [None], "aggregate?": None,
         "window_s?": None, "fire": None, "clear?": None, "sustain?": None}
SCHEMA = {
    "infrastructure": {
        "nodes": [{"id": None, "cpu": None, "mem": None}],
        "links?": [{"id": None, "a": None, "b": None, "bw": None, "latency_ms": None}],
    },
    "services": [{
        "id": None, "vertical": None, "priority": None, "popularity": None,
        "sla": {"max_secondary_fraction": None, "window_s": None,
                "violation_penalty": None, "outage_penalty_rate": None},
        "vnfs": [{"id": None, "cpu": None, "mem": None, "proc_ms": None}],
        "graphs": [{"level": None, "utility": None, "revenue_per_h": None, "kpi_max_delay_ms": None,
                    "vnfs": [None], "vlinks?": [{"src": None, "dst": None, "bw": None}]}],
        "alert_rules?": [_RULE],
    }],
    "events?": [{"t": None, "kind": None, "args": {"element?": None, "service?": None, "factor?": None}}],
    "delays?": {f"{k}?": [None] for k in DELAY_KINDS},
    "monitor?": {"sampling_period_s?": None},
    "duration_s": None,
}


@dataclass(frozen=True)
class ScriptEvent:
    t: float
    kind: str
    args: Tuple[Tuple[str, Any], ...]

    def arg(self, name: str):
        return dict(self.args)[name]


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    infra: Infrastructure
    services: Tuple[ServiceSpec, ...]
    events: Tuple[ScriptEvent, ...] = ()
    delays: DelayConfig = field(default_factory=DelayConfig)
    sampling_period: float = DEFAULT_SAMPLING_PERIOD
    duration: float = 3600.0

    def service(self, service_id: str) -> ServiceSpec:
        for s in self.services:
            if s.service_id == service_id:
                return s
        raise KeyError(service_id)


def _check(doc, schema, path: str) -> None:
    if schema is None:
        if isinstance(doc, (dict, list)):
            raise ParseError("expected a scalar", path)
        return
    if isinstance(schema, list):
        if not isinstance(doc, list):
            raise ParseError("expected a list", path)
        for i, item in enumerate(doc):
            _check(item, schema[0], f"{path}[{i}]")
        return
    if not isinstance(doc, dict):
        raise ParseError("expected a mapping", path)
    keys = {k.rstrip("?"): k for k in schema}
    for k in doc:
        if k not in keys:
            raise ParseError(f"unknown key {k!r}", f"{path}.{k}" if path else str(k))
    for bare, k in keys.items():
        sub = f"{path}.{bare}" if path else bare
        if bare not in doc:
            if not k.endswith("?"):
                raise ParseError(f"missing key {bare!r}", sub)
            continue
        _check(doc[bare], schema[k], sub)


def _number(value, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected a number, got {value!r}", where)
    value = float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise ParseError(f"expected a {'positive ' if positive else ''}finite number, got {value!r}", where)
    return value


def _rule(raw: Mapping, service_id: str, where: str) -> AlertRule:
    kind = raw["kind"]
    subjects = raw.get("subjects")
    if subjects is None and kind in ("service_delay", "app_custom"):
        subjects = [service_id]
    try:
        return AlertRule(
            rule_id=str(raw["id"]),
            source_kind=kind,
            fire_threshold=_number(raw["fire"], f"{where}.fire"),
            clear_threshold=None if raw.get("clear") is None else _number(raw["clear"], f"{where}.clear"),
            subjects=None if subjects is None else tuple(str(s) for s in subjects),
            aggregate=raw.get("aggregate", "instant"),
            window=_number(raw.get("window_s", 0.0), f"{where}.window_s"),
            sustain_samples=int(raw.get("sustain", 1)),
        )
    except ParseError:
        raise
    except ValidationError as exc:
        raise ParseError(str(exc), where) from None


def _event(raw: Mapping, scenario: Dict[str, Any], where: str) -> ScriptEvent:
    t = _number(raw["t"], f"{where}.t")
    if t < 0:
        raise ParseError("event time must be >= 0", f"{where}.t")
    kind = raw["kind"]
    args = raw["args"]
    if kind not in EVENT_KINDS:
        raise ParseError(f"unknown event kind {kind!r}", f"{where}.kind")
    if kind in ("fail", "recover"):
        if set(args) != {"element"}:
            raise ParseError(f"{kind} takes exactly args.element", f"{where}.args")
        element = str(args["element"])
        infra: Infrastructure = scenario["infra"]
        if element not in infra.nodes and element not in infra.links:
            raise ParseError(f"unknown element {element!r}", f"{where}.args.element")
        return ScriptEvent(t, kind, (("element", element),))
    if set(args) != {"service", "factor"}:
        raise ParseError("load takes exactly args.service and args.factor", f"{where}.args")
    service = str(args["service"])
    if service not in scenario["service_ids"]:
        raise ParseError(f"unknown service {service!r}", f"{where}.args.service")
    factor = _number(args["factor"], f"{where}.args.factor", positive=True)
    return ScriptEvent(t, kind, (("service", service), ("factor", factor)))


def scenario_from_dict(doc: Mapping, scenario_id: str, origin: str = "") -> Scenario:
    """Validate a scenario document already loaded into plain maps and lists."""
    prefix = f"{origin}:" if origin else ""
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a mapping", origin or None)
    try:
        _check(doc, SCHEMA, "")
    except ParseError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], f"{prefix}{exc.location}") from None

    def located(where: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParseError as exc:
            raise ParseError(str(exc).split(": ", 1)[-1], f"{prefix}{exc.location}") from None
        except ValidationError as exc:
            exc.args = (f"{prefix}{where}: {exc.args[0]}",)
            exc.location = f"{prefix}{where}"
            raise

    infra = located("infrastructure", build_infrastructure, doc["infrastructure"])
    services: List[ServiceSpec] = []
    rule_ids = set(BUILTIN_RULE_IDS)
    for i, raw in enumerate(doc["services"]):
        where = f"services[{i}]"
        spec = located(where, validate_service, raw)
        if any(s.service_id == spec.service_id for s in services):
            raise DuplicateId(f"{prefix}{where}: duplicate service id {spec.service_id!r}", spec.service_id)
        if spec.service_id in infra.nodes or spec.service_id in infra.links:
            raise DuplicateId(f"{prefix}{where}: service id {spec.service_id!r} clashes with an element",
                              spec.service_id)
        rules = []
        for j, r in enumerate(raw.get("alert_rules", [])):
            rule = located(f"{where}.alert_rules[{j}]", _rule, r, spec.service_id, f"{where}.alert_rules[{j}]")
            if rule.rule_id in rule_ids:
                raise DuplicateId(f"{prefix}{where}.alert_rules[{j}]: duplicate rule id {rule.rule_id!r}",
                                  rule.rule_id)
            rule_ids.add(rule.rule_id)
            rules.append(rule)
        services.append(replace(spec, alert_rules=tuple(rules)))
    if not services:
        raise ParseError("at least one service is required", f"{prefix}services")

    duration = located("duration_s", _number, doc["duration_s"], "duration_s", True)
    ctx = {"infra": infra, "service_ids": {s.service_id for s in services}}
    events = tuple(located(f"events[{i}]", _event, e, ctx, f"events[{i}]")
                   for i, e in enumerate(doc.get("events", [])))
    for i, e in enumerate(events):
        if e.t >= duration:
            raise ParseError("event time must be before duration_s", f"{prefix}events[{i}].t")

    delays_raw = doc.get("delays", {})
    ranges = {}
    for k, v in delays_raw.items():
        if len(v) != 2:
            raise ParseError("delay range needs [lo, hi]", f"{prefix}delays.{k}")
        ranges[k] = (located(f"delays.{k}", _number, v[0], f"delays.{k}[0]"),
                     located(f"delays.{k}", _number, v[1], f"delays.{k}[1]"))
    delays = located("delays", DelayConfig, **ranges) if ranges else DelayConfig()

    period = doc.get("monitor", {}).get("sampling_period_s", DEFAULT_SAMPLING_PERIOD)
    period = located("monitor.sampling_period_s", _number, period, "monitor.sampling_period_s", True)
    return Scenario(scenario_id, infra, tuple(services), events, delays, period, duration)


def fixture_names() -> List[str]:
    root = resources.files("shiftsim") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def fixture_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".yaml") else name
    return Path(str(resources.files("shiftsim") / "fixtures" / f"{stem}.yaml"))


def parse_scenario(path: Union[str, Path]) -> Scenario:
    """Load and validate a scenario file; a bundled fixture name also works.

    Raises FileNotFoundError for a missing file and :class:`ParseError` (or a
    more specific validation error) naming the offending key path.
    """
    p = Path(path)
    if not p.exists():
        stem = p.name[:-5] if p.name.endswith(".yaml") else p.name
        if p.parent == Path(".") and stem in fixture_names():
            p = fixture_path(stem)
        else:
            raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{p}:{mark.line + 1}" if mark else str(p)
        raise ParseError(f"malformed document: {getattr(exc, 'problem', exc)}", where) from None
    return scenario_from_dict(doc, p.stem, str(p))


def _num(x: float):
    return int(x) if float(x).is_integer() else float(x)


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    infra = scenario.infra
    doc: Dict[str, Any] = {
        "infrastructure": {
            "nodes": [{"id": n.id, "cpu": _num(n.cpu_capacity), "mem": _num(n.mem_capacity)}
                      for n in infra.nodes.values()],
            "links": [{"id": l.id, "a": l.endpoints[0], "b": l.endpoints[1],
                       "bw": _num(l.bandwidth_capacity), "latency_ms": _num(l.latency)}
                      for l in infra.links.values()],
        },
        "services": [],
    }
    for s in scenario.services:
        penalty = s.sla.violation_penalty
        entry = {
            "id": s.service_id, "vertical": s.vertical_id, "priority": s.sla.priority,
            "popularity": s.popularity,
            "sla": {"max_secondary_fraction": _num(s.sla.max_secondary_fraction),
                    "window_s": _num(s.sla.window),
                    "violation_penalty": SAFETY if penalty == SAFETY else _num(penalty),
                    "outage_penalty_rate": _num(s.sla.outage_penalty_rate)},
            "vnfs": [{"id": d.vnf_id, "cpu": _num(d.cpu_demand), "mem": _num(d.mem_demand),
                      "proc_ms": _num(d.proc_delay)} for d in s.vnf_catalog.values()],
            "graphs": [{"level": g.level, "utility": _num(g.utility), "revenue_per_h": _num(g.revenue_rate),
                        "kpi_max_delay_ms": _num(g.kpi_max_delay), "vnfs": sorted(g.vnfs),
                        "vlinks": [{"src": vl.src, "dst": vl.dst, "bw": _num(vl.bw_demand)}
                                   for vl in g.vlinks]} for g in s.graphs],
        }
        if s.alert_rules:
            entry["alert_rules"] = [{
                "id": r.rule_id, "kind": r.source_kind,
                "subjects": list(r.subjects) if r.subjects is not None else None,
                "aggregate": r.aggregate, "window_s": _num(r.window), "fire": _num(r.fire_threshold),
                "clear": _num(r.clear_threshold), "sustain": r.sustain_samples,
            } for r in s.alert_rules]
            for r in entry["alert_rules"]:
                if r["subjects"] is None:
                    del r["subjects"]
        doc["services"].append(entry)
    doc["events"] = [{"t": _num(e.t), "kind": e.kind,
                      "args": {k: (_num(v) if isinstance(v, float) else v) for k, v in e.args}}
                     for e in scenario.events]
    doc["delays"] = {k: [_num(x) for x in scenario.delays.range(k)] for k in DELAY_KINDS}
    doc["monitor"] = {"sampling_period_s": _num(scenario.sampling_period)}
    doc["duration_s"] = _num(scenario.duration)
    return doc


def emit(scenario: Scenario, path: Optional[Union[str, Path]] = None) -> str:
    """Serialize ``scenario`` to YAML text, also writing it to ``path`` when given."""
    text = yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
