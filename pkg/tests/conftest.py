"""Shared fixtures and the acceptance report printed at the end of a run."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import pytest

from support import fuzz_scenario

ACCEPTANCE: Dict[int, Tuple[bool, str]] = {}

FUZZ_POLICIES = ("payoff", "qoe", "reaction")
FUZZ_MIN_DECISIONS = 1000


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@dataclass
class FuzzRun:
    seed: int
    policy: str
    scenario: object
    result: object


@pytest.fixture(scope="session")
def fuzz_corpus() -> List[FuzzRun]:
    """Shifting-policy runs over fuzzed scenarios, enough for 1000 shift-down decisions."""
    from shiftsim.simengine import run

    runs: List[FuzzRun] = []
    decisions = 0
    seed = 0
    while decisions < FUZZ_MIN_DECISIONS:
        sc = fuzz_scenario(seed)
        for policy in FUZZ_POLICIES:
            result = run(sc, seed, policy)
            runs.append(FuzzRun(seed, policy, sc, result))
            decisions += len(result.report.decisions)
        seed += 1
    return runs
