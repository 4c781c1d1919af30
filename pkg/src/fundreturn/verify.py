"""Numerical checks of the properties of the group average return.

Deterministic checks compare the average return against closed-form
references under grid refinement on nested Brownian drivers. Statistical
checks (martingale, submartingale) use Monte Carlo means with a fixed
confidence multiplier chosen before the run.

All statistics are aggregated over paths in index order with ``math.fsum`` so
reports are bit-identical across thread counts.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .funds import consistency_residuals, simulate_funds
from .market import ValidationError, sample_drivers, simulate_assets
from .returns import average_return, per_fund_return
from .scenario import Scenario, simulate, simulate_branches, simulate_nested

__all__ = [
    "TestReport",
    "MartingaleTestSpec",
    "check_property1",
    "check_property2",
    "check_property3",
    "check_property4",
    "check_residuals",
    "martingale_test",
    "submartingale_test",
    "convergence_study",
    "METRICS",
    "SUITES",
    "run_suite",
]

REFINEMENTS = (64, 128, 256, 512)
RATIO_BAND = (1.5, 3.0)
EXACT_FLOOR = 1e-10
FINAL_TOL = 1e-3
CHAIN_TOL = 1e-12


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    name: str
    scenario_digest: str
    paths: int
    statistics: dict
    tolerance: dict
    passed: bool
    invalid_paths: int = 0
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        if not timing:
            d.pop("wall_time")
        return d

    def line(self) -> str:
        status = "PASS" if self.passed else ("ERROR" if self.error else "FAIL")
        return f"{status:5s} {self.name}"


@dataclass(frozen=True)
class MartingaleTestSpec:
    checkpoints: tuple[float, ...] = (0.25, 0.5, 1.0)
    paths: int = 10_000
    branch_time: float = 0.5
    base_paths: int = 50
    branches: int = 1000
    multiplier: float = 4.0
    min_inside: float = 0.95

    def __post_init__(self):
        cps = tuple(self.checkpoints)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValidationError("checkpoints must be strictly increasing")
        if self.paths < 100 or self.branches < 100:
            raise ValidationError("paths and branches must be >= 100")


def _fsum_mean_se(x: np.ndarray) -> tuple[float, float]:
    x = [float(v) for v in np.asarray(x).ravel()]
    m = len(x)
    mean = math.fsum(x) / m
    var = math.fsum((v - mean) ** 2 for v in x) / (m - 1) if m > 1 else 0.0
    return mean, math.sqrt(var / m)


def _rms(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return math.sqrt(math.fsum(float(v) * float(v) for v in x) / x.size)


def _growth_error(rbar, ref) -> np.ndarray:
    """Relative error of the growth factor ``1 + rbar`` against ``1 + ref``."""
    return np.abs((1.0 + rbar) / (1.0 + ref) - 1.0)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        rep = fn(*args, **kwargs)
        rep.wall_time = time.perf_counter() - t0
        return rep
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _nodes(grid, s: float | None, t: float | None) -> tuple[int, int]:
    si = 0 if s is None else grid.node_index(s)
    ti = grid.steps if t is None else grid.node_index(t)
    if si >= ti:
        raise ValidationError("need s < t")
    return si, ti


def _refinement_verdict(errors: list[float]) -> tuple[bool, dict]:
    ratios = [a / b if b > 0 else math.inf for a, b in zip(errors, errors[1:])]
    exact = max(errors) < EXACT_FLOOR
    in_band = all(RATIO_BAND[0] <= r <= RATIO_BAND[1] for r in ratios)
    final_ok = errors[-1] < FINAL_TOL
    stats = {"errors": errors, "ratios": ratios, "exact": exact,
             "ratios_in_band": in_band, "final_below_tol": final_ok}
    return exact or (in_band and final_ok), stats


def _refinement_check(name: str, scenario: Scenario, refinements, paths: int, s, t,
                      reference: Callable, threads: int, precheck: Callable | None = None):
    runs = simulate_nested(scenario, refinements, paths, threads=threads)
    errors, invalid = [], 0
    for K, (_, funds) in runs.items():
        if precheck is not None:
            precheck(funds)
        invalid = max(invalid, funds.invalid_count)
        funds = funds.select(funds.valid)
        si, ti = _nodes(funds.grid, s, t)
        rbar = average_return(funds, si, ti)
        errors.append(_rms(_growth_error(rbar, reference(funds, si, ti))))
    passed, stats = _refinement_verdict(errors)
    stats["steps"] = list(runs)
    tol = {"ratio_band": list(RATIO_BAND), "final": FINAL_TOL, "exact_floor": EXACT_FLOOR}
    return TestReport(name, scenario.digest, paths, stats, tol, passed, invalid)


def _unit_value_return(fund: int = 0):
    def ref(funds, s, t):
        return per_fund_return(funds.w, s, t)[:, fund]
    return ref


@_timed
def check_property1(scenario: Scenario, refinements=REFINEMENTS, paths: int = 128,
                    s: float | None = None, t: float | None = None, threads: int = 1) -> TestReport:
    """Single fund: the group return equals the unit-value return.

    Error is the RMS over ``paths`` of the relative growth-factor error. Passes
    if it is below ``EXACT_FLOOR`` at every resolution, or if each halving of
    the step shrinks it by a factor in ``RATIO_BAND`` and the finest error is
    below ``FINAL_TOL``.
    """
    if scenario.controls.n != 1:
        raise ValidationError(f"property 1 needs a single fund, scenario has {scenario.controls.n}")
    return _refinement_check("property1", scenario, refinements, paths, s, t,
                             _unit_value_return(0), threads)


@_timed
def check_property2(scenario: Scenario, paths: int = 100, triples: int = 10,
                    times: list[tuple[float, float, float]] | None = None,
                    threads: int = 1) -> TestReport:
    """Chain rule ``1 + r(s,t) = (1 + r(s,u)) (1 + r(u,t))`` on every path.

    Random node triples are drawn from a generator seeded by the scenario
    seed unless explicit ``times`` are given.
    """
    grid = scenario.grid
    if times is None:
        rng = np.random.default_rng([scenario.seed, 2])
        node_triples = [tuple(sorted(rng.choice(grid.steps + 1, size=3, replace=False)))
                        for _ in range(triples)]
    else:
        node_triples = [tuple(grid.node_index(x) for x in tr) for tr in times]
        if any(not a <= b <= c for a, b, c in node_triples):
            raise ValidationError("each triple must satisfy s <= u <= t")
    _, funds = simulate(scenario, paths=paths, threads=threads)
    invalid = funds.invalid_count
    funds = funds.select(funds.valid)
    worst = 0.0
    per_triple = []
    for a, b, c in node_triples:
        full = average_return(funds, a, c)
        split = (1.0 + average_return(funds, a, b)) * (1.0 + average_return(funds, b, c))
        res = float(np.max(np.abs((1.0 + full) - split) / (1.0 + np.abs(full)), initial=0.0))
        per_triple.append({"nodes": [int(a), int(b), int(c)], "max_residual": res})
        worst = max(worst, res)
    stats = {"max_residual": worst, "triples": per_triple}
    return TestReport("chain", scenario.digest, funds.M, stats, {"relative": CHAIN_TOL},
                      worst < CHAIN_TOL, invalid)


def _check_identical_units(funds) -> None:
    w = funds.w
    dev = float(np.max(np.abs(w - w[..., :1]) / w[..., :1]))
    if dev > 1e-12:
        raise ValidationError(f"unit values of the funds differ by {dev:.3g}; "
                              "scenario must give all funds the same w0 and weights")


@_timed
def check_property3(scenario: Scenario, refinements=REFINEMENTS, paths: int = 128,
                    s: float | None = None, t: float | None = None, threads: int = 1) -> TestReport:
    """Funds with identical unit values: the group return is their common return."""
    c = scenario.controls
    if not (np.all(c.w0 == c.w0[0]) and np.all(c.weights.values == c.weights.values[:, :1, :])):
        raise ValidationError("property 3 needs identical w0 and weight rows for all funds")
    return _refinement_check("property3", scenario, refinements, paths, s, t,
                             _unit_value_return(0), threads, precheck=_check_identical_units)


@_timed
def check_property4(scenario: Scenario, unit_weights=None, phi: Callable | None = None,
                    refinements=REFINEMENTS, paths: int = 32, s: float | None = None,
                    t: float | None = None, tol: float = 1e-2, threads: int = 1) -> TestReport:
    """Unit counts proportional to fixed weights: ``k_i(u) = a_i phi(u)``.

    With ``phi=None`` the unit counts are held constant (no transfers, no
    flows) and ``a_i`` are the shares of ``k0``; the group return must then
    equal both the ``a``-weighted unit-value return and the total wealth
    return. A callable ``phi`` prescribes ``k_i(t) = a_i phi(t)`` directly,
    each net flow financing exactly the prescribed unit change; only the
    weighted form is compared.
    """
    c = scenario.controls
    if unit_weights is None:
        unit_weights = c.k0 / c.k0.sum()
    a = np.asarray(unit_weights, dtype=float)
    if a.shape != (c.n,) or np.any(a <= 0) or abs(a.sum() - 1.0) > 1e-12:
        raise ValidationError("unit weights must be positive and sum to 1")
    constant = phi is None
    if constant:
        if np.any(c.transfers.values) or np.any(c.flow_drift.values) or np.any(c.flow_vol.values):
            raise ValidationError("constant-unit case needs zero transfers and flows")
        if not np.allclose(c.k0 / a, c.k0[0] / a[0], rtol=1e-12, atol=0):
            raise ValidationError("k0 is not proportional to the unit weights")
    elif np.any(c.flow_vol.values):
        raise ValidationError("prescribed unit paths need flow_vol == 0")

    counts = [int(x) for x in refinements]
    finest = counts[-1]
    errors = {"weighted": [], "wealth": []}
    construction = 0.0
    invalid = 0
    for K in counts:
        sc = scenario.with_grid(K)
        grid = sc.grid
        drv = sample_drivers(grid.refine(finest // K), sc.market.N, sc.seed, range(paths),
                             n_flow=c.n).coarsen(finest // K)
        assets = simulate_assets(sc.market, drv, grid)
        unit_path = None if constant else np.outer([phi(x) for x in grid.nodes], a)
        funds = simulate_funds(c, assets, drv, unit_path=unit_path)
        invalid = max(invalid, funds.invalid_count)
        funds = funds.select(funds.valid)
        ratio = funds.k / a
        construction = max(construction, float(np.max(np.abs(ratio - ratio[..., :1]) / ratio[..., :1])))
        si, ti = _nodes(grid, s, t)
        rbar = average_return(funds, si, ti)
        ws = funds.w[:, si]
        r_i = per_fund_return(funds.w, si, ti)
        weighted = np.sum(a * r_i * ws, axis=-1) / np.sum(a * ws, axis=-1)
        errors["weighted"].append(_rms(_growth_error(rbar, weighted)))
        if constant:
            A = funds.A
            errors["wealth"].append(_rms(_growth_error(rbar, A[:, ti] / A[:, si] - 1.0)))
    if construction > 1e-9:
        raise ValidationError(f"unit counts are not proportional across funds ({construction:.3g})")

    def shrinking(errs):
        return all(e < EXACT_FLOOR for e in errs) or errs[-1] < errs[0]

    forms = [f for f in errors if errors[f]]
    passed = all(errors[f][-1] < tol and shrinking(errors[f]) for f in forms)
    stats = {"steps": counts, "errors": {f: errors[f] for f in forms},
             "construction_deviation": construction, "constant_units": constant}
    return TestReport("property4", scenario.digest, paths, stats,
                      {"relative": tol, "exact_floor": EXACT_FLOOR}, passed, invalid)


@_timed
def check_residuals(scenario: Scenario, paths: int = 32, refinements=(64, 128, 256, 512, 1024),
                    order_band=(0.5, 1.5), threads: int = 1) -> TestReport:
    """Accounting identities at the scenario grid plus the flow-identity order."""
    _, funds = simulate(scenario, paths=paths, threads=threads)
    rep = consistency_residuals(funds)
    study = convergence_study(scenario, refinements, "flow_residual", paths=paths, threads=threads)
    order = study.statistics["order"]
    order_ok = order is None or order_band[0] <= order <= order_band[1]
    stats = dict(rep.to_dict(), order=order, convergence=study.statistics)
    stats.pop("pass")
    tol = dict(rep.tolerances, order_band=list(order_band))
    return TestReport("residuals", scenario.digest, paths, stats, tol,
                      rep.passed and order_ok, funds.invalid_count)


def _checkpoint_nodes(grid, checkpoints) -> list[int]:
    return [grid.node_index(x) for x in checkpoints]


@_timed
def martingale_test(scenario: Scenario, spec: MartingaleTestSpec = MartingaleTestSpec(),
                    threads: int = 1) -> TestReport:
    """Mean of ``rbar(0, t)`` is zero, unconditionally and given the past.

    (a) For each checkpoint the mean over ``spec.paths`` paths must lie within
    ``multiplier`` standard errors of 0. (b) The first ``base_paths`` paths
    are frozen at ``branch_time`` and continued along ``branches`` fresh
    branches; at least ``min_inside`` of the branch means of ``rbar(0, T_last)``
    must lie within ``multiplier`` standard errors of ``rbar(0, branch_time)``.
    """
    if np.any(scenario.market.mu.values != 0.0):
        raise ValidationError("martingale test requires mu == 0 for every asset")
    grid = scenario.grid
    nodes = _checkpoint_nodes(grid, spec.checkpoints)
    _, funds = simulate(scenario, paths=spec.paths, threads=threads)
    invalid = funds.invalid_count
    tol = {"multiplier": spec.multiplier, "min_inside": spec.min_inside, "max_invalid_fraction": 0.01}
    if invalid > 0.01 * spec.paths:
        return TestReport("martingale", scenario.digest, spec.paths, {"inconclusive": True},
                          tol, False, invalid, error="more than 1% invalid paths")
    good = funds.select(funds.valid)
    checkpoints = []
    ok = True
    for x, ti in zip(spec.checkpoints, nodes):
        mean, se = _fsum_mean_se(average_return(good, 0, ti))
        inside = abs(mean) <= spec.multiplier * se if se > 0 else abs(mean) < 1e-12
        ok &= inside
        checkpoints.append({"t": x, "mean": mean, "se": se, "z": mean / se if se > 0 else 0.0,
                            "inside": bool(inside)})

    si = grid.node_index(spec.branch_time)
    last = nodes[-1]
    branch_rows = []
    base_ids = np.flatnonzero(funds.valid)[: spec.base_paths]
    for p in base_ids:
        p = int(p)
        tail = simulate_branches(scenario, funds, p, p, si, spec.branches)
        tail = tail.select(tail.valid)
        base = float(average_return(funds.select([p]), 0, si)[0])
        total = (1.0 + base) * (1.0 + average_return(tail, 0, last - si)) - 1.0
        mean, se = _fsum_mean_se(total)
        inside = abs(mean - base) <= spec.multiplier * se if se > 0 else abs(mean - base) < 1e-12
        branch_rows.append({"path": p, "rbar_s": base, "branch_mean": mean, "se": se,
                            "inside": bool(inside)})
    frac = sum(r["inside"] for r in branch_rows) / max(len(branch_rows), 1)
    ok &= frac >= spec.min_inside
    stats = {"checkpoints": checkpoints, "branching": {"s": spec.branch_time,
             "t": spec.checkpoints[-1], "fraction_inside": frac, "paths": branch_rows}}
    return TestReport("martingale", scenario.digest, spec.paths, stats, tol, bool(ok), invalid)


@_timed
def submartingale_test(scenario: Scenario, spec: MartingaleTestSpec = MartingaleTestSpec(),
                       strict: bool = False, threads: int = 1) -> TestReport:
    """Mean of ``rbar(0, t)`` does not decrease across checkpoints.

    Requires ``mu >= 0`` and long-only weights. For each consecutive pair of
    checkpoints the mean difference must exceed ``-multiplier * SE``; with
    ``strict`` it must exceed ``+multiplier * SE`` (a detectable increase).
    """
    if np.any(scenario.market.mu.values < 0):
        raise ValidationError("submartingale test requires mu >= 0")
    if np.any(scenario.controls.weights.values < 0):
        raise ValidationError("submartingale test requires non-negative weights (no short sales)")
    nodes = _checkpoint_nodes(scenario.grid, spec.checkpoints)
    _, funds = simulate(scenario, paths=spec.paths, threads=threads)
    invalid = funds.invalid_count
    good = funds.select(funds.valid)
    rbar = {ti: average_return(good, 0, ti) for ti in nodes}
    pairs = []
    ok = True
    for (x1, n1), (x2, n2) in zip(zip(spec.checkpoints, nodes), list(zip(spec.checkpoints, nodes))[1:]):
        mean, se = _fsum_mean_se(rbar[n2] - rbar[n1])
        bound = spec.multiplier * se
        this = mean > bound if strict else mean >= -bound
        ok &= this
        pairs.append({"t1": x1, "t2": x2, "mean_increase": mean, "se": se,
                      "increase_detected": bool(mean > bound), "pass": bool(this)})
    stats = {"pairs": pairs, "strict": strict,
             "means": [_fsum_mean_se(rbar[ti])[0] for ti in nodes]}
    return TestReport("submartingale", scenario.digest, spec.paths, stats,
                      {"multiplier": spec.multiplier}, bool(ok), invalid)


def _metric_unit_return(funds, s, t):
    return _growth_error(average_return(funds, s, t), per_fund_return(funds.w, s, t)[:, 0])


def _metric_wealth_return(funds, s, t):
    A = funds.A
    return _growth_error(average_return(funds, s, t), A[:, t] / A[:, s] - 1.0)


def _metric_flow_residual(funds, s, t):
    return consistency_residuals(funds).per_path_flow


METRICS: dict[str, Callable] = {
    "unit_return": _metric_unit_return,
    "wealth_return": _metric_wealth_return,
    "flow_residual": _metric_flow_residual,
}


@_timed
def convergence_study(scenario: Scenario, step_counts, metric: str = "flow_residual",
                      paths: int = 32, threads: int = 1) -> TestReport:
    """Metric (RMS over paths) versus step size on nested drivers.

    ``order`` is the least-squares slope of log error against log step; it is
    ``None`` when all errors sit at the rounding floor.
    """
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    runs = simulate_nested(scenario, step_counts, paths, threads=threads)
    rows, errs, dts = [], [], []
    for K, (_, funds) in runs.items():
        funds = funds.select(funds.valid)
        e = _rms(METRICS[metric](funds, 0, K))
        rows.append({"steps": K, "dt": funds.grid.dt, "error": e})
        errs.append(e)
        dts.append(funds.grid.dt)
    for a, b in zip(rows, rows[1:]):
        ok = a["error"] > EXACT_FLOOR * 1e-3 and b["error"] > EXACT_FLOOR * 1e-3
        b["order"] = math.log(a["error"] / b["error"]) / math.log(a["dt"] / b["dt"]) if ok else None
    if max(errs) < EXACT_FLOOR:
        order = None
    else:
        order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    stats = {"metric": metric, "table": rows, "order": order, "at_floor": order is None}
    return TestReport("convergence", scenario.digest, paths, stats, {}, True)


# Suite runner used by the CLI. Each entry maps a suite name to a callable
# taking (scenario, settings, threads).
def _spec_from(settings: dict) -> MartingaleTestSpec:
    keys = MartingaleTestSpec.__dataclass_fields__
    spec = {k: v for k, v in settings.items() if k in keys}
    if "checkpoints" in spec:
        spec["checkpoints"] = tuple(spec["checkpoints"])
    return MartingaleTestSpec(**spec)


def _pick(settings: dict, *names):
    return {k: settings[k] for k in names if k in settings}


SUITES: dict[str, Callable] = {
    "property1": lambda sc, st, th: check_property1(sc, threads=th, **_pick(st, "refinements", "paths", "s", "t")),
    "chain": lambda sc, st, th: check_property2(sc, threads=th, **_pick(st, "paths", "triples", "times")),
    "property3": lambda sc, st, th: check_property3(sc, threads=th, **_pick(st, "refinements", "paths", "s", "t")),
    "property4": lambda sc, st, th: check_property4(sc, threads=th, **_pick(st, "refinements", "paths", "s", "t", "tol", "unit_weights")),
    "martingale": lambda sc, st, th: martingale_test(sc, _spec_from(st), threads=th),
    "submartingale": lambda sc, st, th: submartingale_test(sc, _spec_from(st), strict=st.get("strict", False), threads=th),
    "residuals": lambda sc, st, th: check_residuals(sc, threads=th, **_pick(st, "paths", "refinements")),
    "convergence": lambda sc, st, th: convergence_study(sc, st.get("step_counts", REFINEMENTS), st.get("metric", "flow_residual"), paths=st.get("paths", 32), threads=th),
}
SUITE_ALIASES = {"property2": "chain"}


def run_suite(scenario: Scenario, name: str, threads: int = 1, paths: int | None = None) -> TestReport:
    """Run one suite, applying the scenario's ``verify.<suite>`` overrides.

    An override mapping may change any scenario section (``market``,
    ``funds``, ``grid``, ...) for that suite only; its ``settings`` key holds
    keyword arguments of the check. Precondition failures become error
    reports instead of exceptions.
    """
    name = SUITE_ALIASES.get(name, name)
    if name not in SUITES:
        raise ValidationError(f"unknown suite {name!r}")
    override = dict(scenario.document.get("verify", {}).get(name) or {})
    settings = dict(override.pop("settings", {}) or {})
    if paths is not None:
        settings["paths"] = paths
    t0 = time.perf_counter()
    try:
        sc = scenario.with_changes(**override) if override else scenario
        return SUITES[name](sc, settings, threads)
    except ValidationError as exc:
        return TestReport(name, scenario.digest, 0, {}, {}, False,
                          wall_time=time.perf_counter() - t0, error=str(exc))
