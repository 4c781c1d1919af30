"""Average rate of return of a group of funds.

The group return over ``[s, t]`` is ``rbar = exp(R) - 1`` with

    R = sum_i int A*_i dw_i/w_i + int dlog A - int dA/A
        + sum_i int (A*_i)^2 dk_i/k_i - sum_i int (A*_i)^2 dlog k_i

where ``A*_i = A_i / A`` is the wealth share of fund ``i``. Besides this
continuous-time form the module provides the drift-only reduction (no unit
terms), the discrete-period product formula and the classical deterministic
formula based on instantaneous rates ``d log w_i / dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .funds import FundPaths
from .ito import ito_integral, log_increment
from .market import TimeGrid, ValidationError

__all__ = [
    "ReturnSeries",
    "accumulate_R",
    "average_return",
    "average_return_drift_flows",
    "return_series",
    "per_fund_return",
    "discrete_snapshots",
    "discrete_average_return",
    "deterministic_average_return",
]

LOG_UNIT_RULES = ("ito", "exact")


def _require_valid(paths: FundPaths) -> None:
    if paths.invalid_count:
        raise ValidationError(f"{paths.invalid_count} invalid path(s); select valid paths first")


def _terms(paths: FundPaths, s: int, t: int, log_units: str):
    """The five integrals, each of shape (paths,)."""
    if log_units not in LOG_UNIT_RULES:
        raise ValidationError(f"log_units must be one of {LOG_UNIT_RULES}")
    _require_valid(paths)
    w, k, A = paths.w, paths.k, paths.A
    share = paths.A_star
    share2 = share * share
    unit_value = np.sum(ito_integral(share / w, w, s, t, axis=1), axis=-1)
    log_wealth = log_increment(A, s, t, axis=1)
    wealth = ito_integral(1.0 / A, A, s, t, axis=1)
    units = np.sum(ito_integral(share2 / k, k, s, t, axis=1), axis=-1)
    if log_units == "ito":
        # d log k = dk/k - (beta/(w k))^2 dt / 2, coefficients at the left node.
        corr = 0.5 * (paths.unit_vol[:, s:t] / k[:, s:t]) ** 2 * paths.grid.dt
        log_units_term = units - np.sum(share2[:, s:t] * corr, axis=(1, 2))
    else:
        dlogk = np.diff(np.log(k[:, s : t + 1]), axis=1)
        log_units_term = np.sum(share2[:, s:t] * dlogk, axis=(1, 2))
    return unit_value, log_wealth, wealth, units, log_units_term


def accumulate_R(paths: FundPaths, s: int, t: int, log_units: str = "ito") -> np.ndarray:
    """Log-scale accumulated group return ``R(s, t)`` for every path.

    ``log_units`` selects how ``int (A*_i)^2 dlog k_i`` is discretized:
    ``"ito"`` uses the Ito differential of ``log k_i`` (exactly cancels the
    ``dk/k`` term when flows carry no noise), ``"exact"`` uses per-step
    log-ratios of ``k_i``. Both converge to the same integral.
    """
    a, b, c, d, e = _terms(paths, s, t, log_units)
    return a + b - c + (d - e)


def average_return(paths: FundPaths, s: int, t: int, log_units: str = "ito") -> np.ndarray:
    return np.expm1(accumulate_R(paths, s, t, log_units))


def average_return_drift_flows(paths: FundPaths, s: int, t: int) -> np.ndarray:
    """Three-term form without unit corrections; only for noise-free flows."""
    if not paths.drift_only:
        raise ValidationError("drift-only reduction requires flow_vol == 0")
    a, b, c, _, _ = _terms(paths, s, t, "ito")
    return np.expm1(a + b - c)


@dataclass(frozen=True)
class ReturnSeries:
    """``R`` and ``rbar`` from anchor node ``s`` to every later node."""

    grid: TimeGrid
    anchor: int
    R: np.ndarray      # (paths, steps + 1 - anchor)
    rbar: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.anchor :]


def return_series(paths: FundPaths, s: int = 0, log_units: str = "ito") -> ReturnSeries:
    """``R(s, t)`` for every node ``t >= s`` via running sums of per-step terms.

    Agrees with :func:`accumulate_R` up to floating-point rounding.
    """
    if log_units not in LOG_UNIT_RULES:
        raise ValidationError(f"log_units must be one of {LOG_UNIT_RULES}")
    _require_valid(paths)
    w, k, A = paths.w[:, s:], paths.k[:, s:], paths.A[:, s:]
    share2 = paths.A_star[:, s:-1] ** 2
    dw, dk, dA = np.diff(w, axis=1), np.diff(k, axis=1), np.diff(A, axis=1)
    step = np.sum(paths.A_star[:, s:-1] * dw / w[:, :-1], axis=-1)
    step += np.diff(np.log(A), axis=1) - dA / A[:, :-1]
    if log_units == "ito":
        corr = 0.5 * (paths.unit_vol[:, s:] / k[:, :-1]) ** 2 * paths.grid.dt
        step += np.sum(share2 * corr, axis=-1)
    else:
        step += np.sum(share2 * (dk / k[:, :-1] - np.diff(np.log(k), axis=1)), axis=-1)
    R = np.concatenate([np.zeros((paths.M, 1)), np.cumsum(step, axis=1)], axis=1)
    return ReturnSeries(paths.grid, s, R, np.expm1(R))


def per_fund_return(w, s: int, t: int) -> np.ndarray:
    """``r_i = (w_i(t) - w_i(s)) / w_i(s)``; time on axis -2."""
    w = np.asarray(w, dtype=float)
    return w[..., t, :] / w[..., s, :] - 1.0


def discrete_snapshots(paths: FundPaths, s: int, t: int, stride: int = 1):
    """Period weights ``A*_i(u)`` and returns ``r_i(u, u+stride)`` on ``[s, t]``."""
    if stride < 1 or (t - s) % stride:
        raise ValidationError(f"stride {stride} must divide t - s = {t - s}")
    idx = np.arange(s, t + 1, stride)
    w = paths.w[:, idx]
    return paths.A_star[:, idx[:-1]], w[:, 1:] / w[:, :-1] - 1.0


def discrete_average_return(weights, period_returns) -> np.ndarray:
    """``prod_u (1 + sum_i A*_i(u) r_i(u, u+1)) - 1`` over periods on axis -2."""
    weights = np.asarray(weights, dtype=float)
    period_returns = np.asarray(period_returns, dtype=float)
    if weights.shape != period_returns.shape or weights.ndim < 2 or weights.shape[-2] < 1:
        raise ValidationError("need matching (..., periods, funds) weights and returns")
    dev = np.max(np.abs(weights.sum(axis=-1) - 1.0))
    if dev > 1e-9:
        raise ValidationError(f"period weights must sum to 1 (deviation {dev:.3g})")
    return np.prod(1.0 + np.sum(weights * period_returns, axis=-1), axis=-1) - 1.0


def deterministic_average_return(k, w, s: int, t: int) -> np.ndarray:
    """Wealth-weighted average of instantaneous rates, compounded.

    ``delta_i dt`` is taken as the per-step log increment of ``w_i`` and the
    weight ``k_i w_i / sum_j k_j w_j`` at the left node. Time on axis -2.
    """
    k = np.asarray(k, dtype=float)
    w = np.asarray(w, dtype=float)
    if k.shape != w.shape:
        raise ValidationError("k and w must have the same shape")
    if not 0 <= s <= t < k.shape[-2]:
        raise ValidationError("s, t must be node indices with s <= t")
    if np.any(~(k > 0)) or np.any(~(w > 0)):
        raise ValidationError("unit counts and values must be > 0")
    A = k * w
    share = A / A.sum(axis=-1, keepdims=True)
    rate_dt = np.diff(np.log(w[..., s : t + 1, :]), axis=-2)
    return np.expm1(np.sum(share[..., s:t, :] * rate_dt, axis=(-2, -1)))
