"""Scenario files and batched path simulation.

A scenario is a YAML document::

    grid:   {horizon: 1.0, steps: 256}          # years; steps default 256
    market:
      c0:    [1.0, 1.0]
      mu:    [0.0, 0.0]                        # per year
      sigma: [[0.2, 0.0], [0.05, 0.15]]        # per sqrt(year)
    funds:
      k0: [100.0, 50.0]
      w0: [1.0, 2.0]
      weights:    [[0.7, 0.3], [0.2, 0.8]]     # rows sum to 1
      transfers:  [[0, 0.5], [1.0, 0]]         # units per year, default 0
      flow_drift: [5.0, -2.0]                  # currency per year, default 0
      flow_vol:   [3.0, 2.0]                   # currency per sqrt(year), default 0
    rng: {seed: 1}                             # default 0
    run: {paths: 1, checkpoints: [1.0]}        # defaults: 1 path, horizon
    verify: {}                                 # per-suite overrides, see verify.py

Any coefficient may instead be given as ``{segments: [{start: 0.0, value: ...},
...]}`` for a piecewise-constant process.
"""

from __future__ import annotations

import copy
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .funds import FundControls, FundPaths, FundState, simulate_funds
from .market import (AssetPaths, BrownianDriver, MarketParams, PiecewiseConstant, TimeGrid,
                     ValidationError, sample_drivers, simulate_assets, stream_key, stream_normals)

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "scenario_from_dict", "simulate",
           "simulate_nested", "simulate_branches", "merge_overrides"]

DEFAULT_STEPS = 256
DEFAULT_HORIZON = 1.0
# Paths are simulated in fixed-size chunks so results never depend on --threads.
CHUNK = 256


class ScenarioError(ValidationError):
    pass


def _parse_process(value, field: str):
    if isinstance(value, dict):
        segs = value.get("segments")
        if not isinstance(segs, list) or not segs:
            raise ScenarioError(f"{field}: 'segments' must be a non-empty list")
        try:
            return PiecewiseConstant.from_segments([(s["start"], s["value"]) for s in segs])
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"{field}: each segment needs 'start' and 'value'") from exc
        except ValueError as exc:
            raise ScenarioError(f"{field}: {exc}") from exc
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{field}: not numeric") from exc
    return PiecewiseConstant.constant(arr)


def _require(section: dict, key: str, path: str):
    if key not in section or section[key] is None:
        raise ScenarioError(f"{path}.{key}: required field missing")
    return section[key]


def _normalize(doc: dict) -> dict:
    """Explicit-defaults copy of ``doc``; the digest is computed from it."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    doc = copy.deepcopy(doc)
    market = _require(doc, "market", "scenario")
    funds = _require(doc, "funds", "scenario")
    for key in ("c0", "mu", "sigma"):
        _require(market, key, "market")
    for key in ("k0", "w0", "weights"):
        _require(funds, key, "funds")
    n = len(np.atleast_1d(funds["k0"]))
    funds.setdefault("transfers", [[0.0] * n for _ in range(n)])
    funds.setdefault("flow_drift", [0.0] * n)
    funds.setdefault("flow_vol", [0.0] * n)
    grid = doc.setdefault("grid", {})
    grid.setdefault("horizon", DEFAULT_HORIZON)
    grid.setdefault("steps", DEFAULT_STEPS)
    rng = doc.setdefault("rng", {})
    rng.setdefault("seed", 0)
    run = doc.setdefault("run", {})
    run.setdefault("paths", 1)
    run.setdefault("checkpoints", [grid["horizon"]])
    doc.setdefault("verify", {})
    return doc


@dataclass(frozen=True)
class Scenario:
    market: MarketParams
    controls: FundControls
    grid: TimeGrid
    seed: int
    paths: int
    checkpoints: tuple[float, ...]
    document: dict

    @property
    def digest(self) -> str:
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_changes(self, **sections) -> "Scenario":
        """New scenario with top-level sections deep-merged into the document."""
        return scenario_from_dict(merge_overrides(self.document, sections))

    def with_grid(self, steps: int) -> "Scenario":
        return self.with_changes(grid={"steps": int(steps)})


def merge_overrides(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_overrides(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def scenario_from_dict(doc: dict) -> Scenario:
    doc = _normalize(doc)
    m, f, g = doc["market"], doc["funds"], doc["grid"]
    try:
        market = MarketParams(np.asarray(m["c0"], dtype=float),
                              _parse_process(m["mu"], "market.mu"),
                              _parse_process(m["sigma"], "market.sigma"))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"market: {exc}") from exc
    try:
        controls = FundControls(
            np.asarray(f["k0"], dtype=float), np.asarray(f["w0"], dtype=float),
            _parse_process(f["weights"], "funds.weights"),
            _parse_process(f["transfers"], "funds.transfers"),
            _parse_process(f["flow_drift"], "funds.flow_drift"),
            _parse_process(f["flow_vol"], "funds.flow_vol"),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"funds: {exc}") from exc
    if controls.N != market.N:
        raise ScenarioError(f"funds.weights: {controls.N} columns but market has {market.N} assets")
    try:
        grid = TimeGrid(float(g["horizon"]), int(g["steps"]))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"grid: {exc}") from exc
    seed = doc["rng"]["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ScenarioError("rng.seed: must be an unsigned 64-bit integer")
    paths = doc["run"]["paths"]
    if not isinstance(paths, int) or paths < 1:
        raise ScenarioError("run.paths: must be a positive integer")
    checkpoints = tuple(float(x) for x in doc["run"]["checkpoints"])
    return Scenario(market, controls, grid, seed, paths, checkpoints, doc)


def parse_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML: {exc}") from exc
    return scenario_from_dict(doc)


def _chunks(indices: np.ndarray):
    return [indices[i : i + CHUNK] for i in range(0, indices.size, CHUNK)]


def _concat_funds(parts: list[FundPaths]) -> FundPaths:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = {f: np.concatenate([getattr(p, f) for p in parts]) for f in
           ("prices", "u", "w", "k", "D", "unit_vol", "valid", "first_invalid")}
    diag = tuple(d for p in parts for d in p.diagnostics)
    return FundPaths(first.grid, drift_only=first.drift_only, diagnostics=diag, **cat)


def _run_chunk(sc: Scenario, grid: TimeGrid, idx: np.ndarray, fine_steps: int | None):
    steps = fine_steps or grid.steps
    drv = sample_drivers(TimeGrid(grid.horizon, steps), sc.market.N, sc.seed, idx, n_flow=sc.controls.n)
    if steps != grid.steps:
        drv = drv.coarsen(steps // grid.steps)
    assets = simulate_assets(sc.market, drv, grid)
    return assets, simulate_funds(sc.controls, assets, drv)


def simulate(scenario: Scenario, paths: int | None = None, path_indices=None,
             threads: int = 1, fine_steps: int | None = None) -> tuple[AssetPaths, FundPaths]:
    """Simulate paths ``0..paths-1`` (or ``path_indices``) of ``scenario``.

    ``fine_steps`` draws the driver on a finer nested grid and sums it down,
    so runs at different resolutions share the same Brownian paths.
    """
    if path_indices is None:
        path_indices = np.arange(scenario.paths if paths is None else paths)
    idx = np.asarray(path_indices, dtype=np.int64)
    grid = scenario.grid
    if fine_steps is not None and fine_steps % grid.steps:
        raise ValidationError(f"fine grid of {fine_steps} steps does not nest {grid.steps}")
    chunks = _chunks(idx)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_chunk(scenario, grid, c, fine_steps), chunks))
    else:
        results = [_run_chunk(scenario, grid, c, fine_steps) for c in chunks]
    prices = np.concatenate([a.prices for a, _ in results])
    valid = np.concatenate([a.valid for a, _ in results])
    assets = AssetPaths(grid, prices, valid, tuple(d for a, _ in results for d in a.diagnostics))
    return assets, _concat_funds([f for _, f in results])


def simulate_nested(scenario: Scenario, step_counts, paths: int, threads: int = 1):
    """Simulations of the same Brownian paths at each step count.

    Every count must divide the next one. Returns ``{steps: (assets, funds)}``.
    """
    counts = [int(c) for c in step_counts]
    if not counts or any(b % a for a, b in zip(counts, counts[1:])) or counts != sorted(set(counts)):
        raise ValidationError(f"step counts {counts} are not nested (each must divide the next)")
    finest = counts[-1]
    return {K: simulate(scenario.with_grid(K), paths=paths, threads=threads, fine_steps=finest)
            for K in counts}


def simulate_branches(scenario: Scenario, funds: FundPaths, path: int, path_index: int,
                      start: int, branches: int) -> FundPaths:
    """Continue one stored path from node ``start`` along fresh Brownian branches.

    Branch ``b`` of base path ``path_index`` uses stream branch ``b + 1``;
    branch 0 is reserved for the base paths themselves.
    """
    grid = scenario.grid.tail(start)
    N, n = scenario.market.N, scenario.controls.n
    key = stream_key(scenario.seed)
    inc = np.empty((branches, grid.steps, N + n))
    for b in range(branches):
        for col in range(N + n):
            inc[b, :, col] = stream_normals(key, path_index, col, grid.steps, branch=b + 1)
    inc *= np.sqrt(grid.dt)
    drv = BrownianDriver(inc, N, scenario.seed)
    assets = simulate_assets(scenario.market, drv, grid, c_start=funds.prices[path, start])
    st = funds.state_at(start)
    initial = FundState(st.u[path], st.w[path], st.k[path], st.D[path])
    return simulate_funds(scenario.controls, assets, drv, initial=initial)
