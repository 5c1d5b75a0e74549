from dataclasses import dataclass

import numpy as np
import pytest

from ddarr.arrgen import SearchConfig, generate_residual_bank, prepare_dataset
from ddarr.cli import DEFAULT_SCENARIOS, DEFAULT_SEED
from ddarr.tanksim import NO_FAULT, TankParams, simulate

TABLE_TARGETS = ("u1", "u2", "y1", "y2", "y3", "y4", "y5", "y6", "int_u1")


@dataclass
class ReferenceRun:
    params: TankParams
    normal: object
    faulty: dict
    scenarios: dict
    bank: list

    def spec(self, target):
        return next((s for s in self.bank if s.target == target), None)


def child_seeds(seed, n):
    # same derivation as the CLI's simulate stage
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@pytest.fixture(scope="session")
def reference_run():
    """Default four-tank data and forward-selected bank, as the CLI builds them."""
    params = TankParams()
    seeds = child_seeds(DEFAULT_SEED, 1 + len(DEFAULT_SCENARIOS))
    normal = prepare_dataset(simulate(params, NO_FAULT, seeds[0]))
    faulty, scen = {}, {}
    for sc, sd in zip(DEFAULT_SCENARIOS, seeds[1:]):
        faulty[sc.label] = prepare_dataset(simulate(params, sc, sd))
        scen[sc.label] = sc
    bank = generate_residual_bank(normal, SearchConfig(), targets=TABLE_TARGETS)
    return ReferenceRun(params, normal, faulty, scen, bank)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
