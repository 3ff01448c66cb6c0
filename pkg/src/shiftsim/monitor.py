"""Simulated monitoring platform: metric streams, threshold rules with hysteresis, alert dispatch."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import OutOfOrderSample, ValidationError

SOURCE_KINDS = ("node_cpu", "node_mem", "link_util", "service_delay", "app_custom")
SERVICE_LAYER = "service_layer"
RESOURCE_LAYER = "resource_layer"
RAISED = "raised"
CLEARED = "cleared"
DEFAULT_CLEAR_RATIO = 0.8


@dataclass(frozen=True)
class MetricSample:
    source_kind: str
    subject_id: str
    value: float
    timestamp: float


@dataclass(frozen=True)
class AlertRule:
    """Fires once the aggregate stays >= fire_threshold for ``sustain_samples``
    consecutive evaluations; clears when it drops to clear_threshold or below.

    ``subjects=None`` matches every subject of ``source_kind``. A missing
    ``clear_threshold`` defaults to 0.8 x fire.
    """

    rule_id: str
    source_kind: str
    fire_threshold: float
    clear_threshold: Optional[float] = None
    subjects: Optional[Tuple[str, ...]] = None
    aggregate: str = "instant"
    window: float = 0.0
    sustain_samples: int = 1

    def __post_init__(self):
        if self.clear_threshold is None:
            object.__setattr__(self, "clear_threshold", DEFAULT_CLEAR_RATIO * self.fire_threshold)
        if self.source_kind not in SOURCE_KINDS:
            raise ValidationError(f"rule {self.rule_id!r}: unknown source kind {self.source_kind!r}")
        if self.aggregate not in ("instant", "sliding_mean"):
            raise ValidationError(f"rule {self.rule_id!r}: unknown aggregate {self.aggregate!r}")
        if self.aggregate == "sliding_mean" and self.window <= 0:
            raise ValidationError(f"rule {self.rule_id!r}: sliding_mean needs a positive window")
        if self.clear_threshold > self.fire_threshold:
            raise ValidationError(f"rule {self.rule_id!r}: clear threshold above fire threshold")
        if self.sustain_samples < 1:
            raise ValidationError(f"rule {self.rule_id!r}: sustain_samples must be >= 1")

    def matches(self, source_kind: str, subject_id: str) -> bool:
        return source_kind == self.source_kind and (self.subjects is None or subject_id in self.subjects)


@dataclass(frozen=True)
class Alert:
    rule_id: str
    subject_id: str
    fired_at: float
    direction: str
    source_kind: str = ""
    value: float = 0.0


@dataclass(frozen=True)
class Subscription:
    """A consumer's interest in alerts, selected by rule id and/or source kind."""

    consumer: str
    rule_ids: Optional[Tuple[str, ...]] = None
    source_kinds: Optional[Tuple[str, ...]] = None


def default_subscriptions() -> List[Subscription]:
    return [
        Subscription(SERVICE_LAYER, source_kinds=("service_delay", "app_custom")),
        Subscription(RESOURCE_LAYER, source_kinds=("node_cpu", "node_mem", "link_util")),
    ]


@dataclass
class _RuleTrack:
    streak: int = 0
    raised: bool = False


class MonitorState:
    def __init__(self, rules: Iterable[AlertRule] = ()):
        self.rules: Dict[str, AlertRule] = {}
        for rule in rules:
            if rule.rule_id in self.rules:
                raise ValidationError(f"duplicate alert rule id {rule.rule_id!r}")
            self.rules[rule.rule_id] = rule
        self.streams: Dict[Tuple[str, str], Deque[Tuple[float, float]]] = {}
        self._tracks: Dict[Tuple[str, str], _RuleTrack] = {}
        self.history: List[Alert] = []
        self.horizon = max((r.window for r in self.rules.values()), default=0.0)

    def ingest(self, sample: MetricSample) -> None:
        key = (sample.source_kind, sample.subject_id)
        stream = self.streams.setdefault(key, deque())
        if stream and sample.timestamp < stream[-1][0]:
            raise OutOfOrderSample(
                f"{key}: sample at t={sample.timestamp} after t={stream[-1][0]}")
        stream.append((sample.timestamp, sample.value))
        cutoff = sample.timestamp - self.horizon
        while len(stream) > 1 and stream[0][0] < cutoff:
            stream.popleft()

    def aggregate(self, rule: AlertRule, subject_id: str, now: float) -> Optional[float]:
        stream = self.streams.get((rule.source_kind, subject_id))
        if not stream:
            return None
        if rule.aggregate == "instant":
            return stream[-1][1]
        values = [v for t, v in stream if now - rule.window <= t <= now]
        if not values:
            return None
        return sum(values) / len(values)

    def evaluate(self, now: float) -> List[Alert]:
        out: List[Alert] = []
        for rule_id in sorted(self.rules):
            rule = self.rules[rule_id]
            subjects = sorted(s for kind, s in self.streams if rule.matches(kind, s))
            for subject in subjects:
                value = self.aggregate(rule, subject, now)
                if value is None:
                    continue
                track = self._tracks.setdefault((rule_id, subject), _RuleTrack())
                track.streak = track.streak + 1 if value >= rule.fire_threshold else 0
                if not track.raised and track.streak >= rule.sustain_samples:
                    track.raised = True
                    out.append(Alert(rule_id, subject, now, RAISED, rule.source_kind, value))
                elif track.raised and value <= rule.clear_threshold:
                    track.raised = False
                    track.streak = 0
                    out.append(Alert(rule_id, subject, now, CLEARED, rule.source_kind, value))
        self.history.extend(out)
        return out

    def active(self) -> List[Alert]:
        """The latest raised alert of every (rule, subject) still raised."""
        latest = {}
        for alert in self.history:
            latest[(alert.rule_id, alert.subject_id)] = alert
        return [a for k, a in sorted(latest.items()) if a.direction == RAISED]


def ingest_sample(state: MonitorState, sample: MetricSample) -> MonitorState:
    state.ingest(sample)
    return state


def evaluate_rules(state: MonitorState, now: float) -> List[Alert]:
    return state.evaluate(now)


def _selected(sub: Subscription, alert: Alert) -> bool:
    if sub.rule_ids is not None and alert.rule_id not in sub.rule_ids:
        return False
    if sub.source_kinds is not None and alert.source_kind not in sub.source_kinds:
        return False
    return True


def dispatch(alerts: Sequence[Alert], subscriptions: Sequence[Subscription]) -> List[Tuple[str, Alert]]:
    """Deliver each alert once to every consumer with a matching subscription."""
    seen = set()
    out = []
    for idx, alert in enumerate(alerts):
        for sub in subscriptions:
            if (sub.consumer, idx) in seen or not _selected(sub, alert):
                continue
            seen.add((sub.consumer, idx))
            out.append((sub.consumer, idx, alert))
    out.sort(key=lambda d: (d[0], d[2].rule_id, d[1]))
    return [(consumer, alert) for consumer, _, alert in out]
