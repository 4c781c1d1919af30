from pathlib import Path

import numpy as np
import pytest

from fundreturn import FundControls, MarketParams, TimeGrid, sample_drivers, simulate_assets, simulate_funds
from fundreturn.scenario import parse_scenario, scenario_from_dict

ROOT = Path(__file__).resolve().parents[1]
REFERENCE = ROOT / "scenarios" / "reference.yaml"

SIGMA2 = [[0.2, 0.0], [0.05, 0.15]]


def two_fund_doc(**funds):
    """Two funds, two correlated assets; keyword arguments override fund fields."""
    doc = {
        "grid": {"horizon": 1.0, "steps": 256},
        "market": {"c0": [1.0, 1.0], "mu": [0.0, 0.0], "sigma": SIGMA2},
        "funds": {
            "k0": [100.0, 50.0], "w0": [1.0, 2.0],
            "weights": [[0.7, 0.3], [0.2, 0.8]],
            "transfers": [[0.0, 5.0], [3.0, 0.0]],
            "flow_drift": [10.0, -4.0], "flow_vol": [5.0, 3.0],
        },
        "rng": {"seed": 11},
    }
    doc["funds"].update(funds)
    return doc


def run_paths(market, controls, steps=256, paths=8, seed=3, T=1.0):
    grid = TimeGrid(T, steps)
    drv = sample_drivers(grid, market.N, seed, range(paths), n_flow=controls.n)
    assets = simulate_assets(market, drv, grid)
    return grid, drv, assets, simulate_funds(controls, assets, drv)


@pytest.fixture
def reference():
    return parse_scenario(REFERENCE)


@pytest.fixture
def two_fund():
    return scenario_from_dict(two_fund_doc())


@pytest.fixture
def frozen_market():
    return MarketParams(np.ones(2), np.zeros(2), np.zeros((2, 2)))


@pytest.fixture
def stochastic_market():
    return MarketParams(np.array([1.0, 2.0]), np.array([0.05, 0.02]), np.array(SIGMA2))


@pytest.fixture
def two_controls():
    return FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]],
                               transfers=[[0.0, 5.0], [3.0, 0.0]],
                               flow_drift=[10.0, -4.0], flow_vol=[5.0, 3.0])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; call with (ok, detail)."""
    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
