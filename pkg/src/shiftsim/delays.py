"""Enactment delay model: uniform draws within configured ranges."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Tuple

from .errors import ValidationError
from .rng import SplitMix64

Range = Tuple[float, float]

DELAY_KINDS = ("vnf_instantiate", "vnf_teardown", "vm_migrate", "route_update")


@dataclass(frozen=True)
class DelayConfig:
    """Ranges in seconds. The migration default spans measured live-migration
    times of roughly 50 s to 270 s; instantiation takes several tens of seconds."""

    vnf_instantiate: Range = (20.0, 60.0)
    vnf_teardown: Range = (5.0, 15.0)
    vm_migrate: Range = (50.0, 270.0)
    route_update: Range = (1.0, 5.0)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not 0 <= lo <= hi:
                raise ValidationError(f"delay range {f.name} must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")
            object.__setattr__(self, f.name, (float(lo), float(hi)))

    def range(self, kind: str) -> Range:
        if kind not in DELAY_KINDS:
            raise ValueError(f"unknown delay kind {kind!r}")
        return getattr(self, kind)


def sample_delay(kind: str, config: DelayConfig, rng: SplitMix64) -> float:
    """One uniform draw in seconds; advances ``rng`` exactly once."""
    lo, hi = config.range(kind)
    return rng.uniform(lo, hi)


def sample_delay_ms(kind: str, config: DelayConfig, rng: SplitMix64) -> int:
    """As :func:`sample_delay`, rounded to whole milliseconds inside the range."""
    lo, hi = config.range(kind)
    ms = int(round(sample_delay(kind, config, rng) * 1000))
    return min(max(ms, math.ceil(lo * 1000)), math.floor(hi * 1000))
