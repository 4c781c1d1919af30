"""Pathwise stochastic calculus on sampled paths.

Paths are arrays whose ``axis`` indexes grid nodes; endpoints ``s`` and ``t``
are node indices. All sums run over ``s <= k < t`` so every quantity is
additive over adjacent intervals.
"""

from __future__ import annotations

import numbers

import numpy as np

from .market import ValidationError

__all__ = ["ito_integral", "quadratic_variation", "log_increment", "ito_integral_series"]


def _check_nodes(x: np.ndarray, s, t, axis: int) -> None:
    for name, v in (("s", s), ("t", t)):
        if not isinstance(v, numbers.Integral) or isinstance(v, bool):
            raise ValidationError(f"{name}={v!r} must be a grid node index")
    nodes = x.shape[axis]
    if not 0 <= s <= t < nodes:
        raise ValidationError(f"need 0 <= s <= t < {nodes}, got s={s}, t={t}")


def _segment(x: np.ndarray, s: int, t: int, axis: int):
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    return x[s:t], np.diff(x[s : t + 1], axis=0)


def ito_integral(phi, x, s: int, t: int, axis: int = 0) -> np.ndarray:
    """Left-endpoint sum ``sum_k phi(t_k) (x(t_{k+1}) - x(t_k))`` over ``[s, t)``."""
    x = np.asarray(x, dtype=float)
    _check_nodes(x, s, t, axis)
    phi = np.moveaxis(np.broadcast_to(np.asarray(phi, dtype=float), x.shape), axis, 0)
    _, dx = _segment(x, s, t, axis)
    return np.sum(phi[s:t] * dx, axis=0)


def ito_integral_series(phi, x, axis: int = 0) -> np.ndarray:
    """Running Ito sums from node 0, one value per node (first is 0)."""
    x = np.asarray(x, dtype=float)
    phi = np.moveaxis(np.broadcast_to(np.asarray(phi, dtype=float), x.shape), axis, 0)
    xs = np.moveaxis(x, axis, 0)
    terms = phi[:-1] * np.diff(xs, axis=0)
    out = np.concatenate([np.zeros_like(terms[:1]), np.cumsum(terms, axis=0)])
    return np.moveaxis(out, 0, axis)


def quadratic_variation(x, s: int, t: int, axis: int = 0) -> np.ndarray:
    """Realized quadratic variation ``sum (dx)^2`` over ``[s, t)``."""
    x = np.asarray(x, dtype=float)
    _check_nodes(x, s, t, axis)
    _, dx = _segment(x, s, t, axis)
    return np.sum(dx * dx, axis=0)


def log_increment(x, s: int, t: int, axis: int = 0) -> np.ndarray:
    """Exact ``log(x(t) / x(s))``; requires ``x > 0`` on ``[s, t]``."""
    x = np.asarray(x, dtype=float)
    _check_nodes(x, s, t, axis)
    seg = np.moveaxis(x, axis, 0)[s : t + 1]
    if np.any(~(seg > 0)):
        raise ValidationError("log_increment requires a strictly positive path")
    return np.log(seg[-1] / seg[0])
