import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from momineq.demand import estimate_demand  # noqa: E402
from momineq.market import SynthConfig, VehicleMarketModel, prepare_panel, synth_dgp  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_config():
    return SynthConfig(n_markets=60, expectation_draws=300)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return synth_dgp(small_config, seed=3)


@pytest.fixture(scope="session")
def fitted(small_dataset):
    """(model, panel, first_stage) for the small synthetic dataset."""
    est = estimate_demand(small_dataset.demand, small_dataset.draws)
    data = small_dataset.demand.with_zeta(est.extra["zeta"])
    panel = prepare_panel(data, small_dataset.events, small_dataset.draws)
    return VehicleMarketModel.from_panel(panel), panel, est


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; the terminal summary prints them all."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
