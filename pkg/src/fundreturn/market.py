"""Time grid, Brownian drivers and asset-price paths.

Prices follow correlated geometric Brownian motions

    dc_i = c_i mu_i dt + c_i sum_l sigma_il dB_l

and are stepped exactly in log space, so positivity holds at every node and
constant coefficients reproduce the closed-form solution on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "ValidationError",
    "TimeGrid",
    "PiecewiseConstant",
    "MarketParams",
    "BrownianDriver",
    "AssetPaths",
    "build_time_grid",
    "stream_key",
    "stream_normals",
    "sample_driver",
    "sample_drivers",
    "simulate_assets",
]

# Smallest singular value of sigma relative to the largest.
SINGULAR_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``start = t_0 < ... < t_steps = horizon``.

    ``start`` is 0 for a full simulation; a nonzero start describes the tail
    of a grid, used when continuing paths from an intermediate node.
    """

    horizon: float
    steps: int
    start: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > self.start):
            raise ValidationError(f"horizon must exceed start, got T={self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps!r}")

    @property
    def dt(self) -> float:
        return (self.horizon - self.start) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.steps + 1)

    @property
    def left_nodes(self) -> np.ndarray:
        return self.nodes[:-1]

    def node_index(self, time: float, snap: bool = False) -> int:
        """Index of the node at ``time``.

        Off-grid times raise unless ``snap`` is set, in which case the nearest
        node is returned.
        """
        pos = (time - self.start) / self.dt
        idx = int(round(pos))
        if not 0 <= idx <= self.steps:
            raise ValidationError(f"time {time} outside grid [{self.start}, {self.horizon}]")
        if not snap and abs(pos - idx) > 1e-9:
            raise ValidationError(f"time {time} is not a grid node (dt={self.dt})")
        return idx

    def tail(self, index: int) -> "TimeGrid":
        """Grid covering ``[t_index, T]`` with the same spacing."""
        if not 0 <= index < self.steps:
            raise ValidationError(f"tail index {index} out of range")
        return TimeGrid(self.horizon, self.steps - index, self.start + index * self.dt)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor, self.start)


def build_time_grid(T: float, steps: int) -> TimeGrid:
    return TimeGrid(float(T), steps)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Deterministic right-continuous step function of time.

    ``starts[j]`` is the time at which ``values[j]`` takes effect; the first
    start must be 0. Values may be arrays of any fixed shape.
    """

    starts: tuple[float, ...]
    values: np.ndarray

    @classmethod
    def constant(cls, value) -> "PiecewiseConstant":
        return cls((0.0,), np.asarray(value, dtype=float)[None, ...])

    @classmethod
    def from_segments(cls, segments: Sequence[tuple[float, object]]) -> "PiecewiseConstant":
        starts = tuple(float(s) for s, _ in segments)
        values = np.stack([np.asarray(v, dtype=float) for _, v in segments])
        return cls(starts, values)

    def __post_init__(self):
        if len(self.starts) == 0 or self.starts[0] != 0.0:
            raise ValidationError("piecewise-constant process must start at t=0")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValidationError("segment start times must be strictly increasing")
        if len(self.starts) != len(self.values):
            raise ValidationError("one value per segment start required")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite coefficient value")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def is_constant(self) -> bool:
        return len(self.starts) == 1

    def at(self, times) -> np.ndarray:
        """Values at ``times``; output shape ``(len(times),) + self.shape``."""
        idx = np.searchsorted(np.asarray(self.starts), np.asarray(times, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, None)]


def as_piecewise(x) -> PiecewiseConstant:
    if isinstance(x, PiecewiseConstant):
        return x
    return PiecewiseConstant.constant(x)


@dataclass(frozen=True)
class MarketParams:
    c0: np.ndarray
    mu: PiecewiseConstant
    sigma: PiecewiseConstant

    def __post_init__(self):
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float).reshape(-1))
        object.__setattr__(self, "mu", as_piecewise(self.mu))
        object.__setattr__(self, "sigma", as_piecewise(self.sigma))
        N = self.c0.size
        if N < 1:
            raise ValidationError("at least one asset required")
        if not np.all(np.isfinite(self.c0)) or np.any(self.c0 <= 0):
            raise ValidationError("initial prices c0 must be finite and > 0")
        if self.mu.shape != (N,):
            raise ValidationError(f"mu must have shape ({N},), got {self.mu.shape}")
        if self.sigma.shape != (N, N):
            raise ValidationError(f"sigma must have shape ({N}, {N}), got {self.sigma.shape}")
        for j, s in enumerate(self.sigma.values):
            # An all-zero segment is a deterministic market, allowed as a degenerate case.
            if not np.any(s):
                continue
            sv = np.linalg.svd(s, compute_uv=False)
            if sv[-1] < SINGULAR_TOL * sv[0]:
                raise ValidationError(f"sigma segment {j} is singular")

    @property
    def N(self) -> int:
        return self.c0.size

    @property
    def frozen(self) -> bool:
        return bool(np.all(self.sigma.values == 0.0))


@dataclass(frozen=True)
class BrownianDriver:
    """Gaussian increments of independent Brownian motions on a grid.

    ``increments`` has shape ``(..., steps, dim)``: a leading batch axis holds
    one row per path. Columns ``0..n_price-1`` drive prices, the rest drive
    fund flows.
    """

    increments: np.ndarray
    n_price: int
    seed: int | None = None
    path_indices: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.increments.shape[-1]

    @property
    def steps(self) -> int:
        return self.increments.shape[-2]

    @property
    def price(self) -> np.ndarray:
        return self.increments[..., : self.n_price]

    @property
    def flow(self) -> np.ndarray:
        return self.increments[..., self.n_price :]

    def paths(self) -> np.ndarray:
        """Brownian values at the nodes, starting from 0."""
        inc = self.increments
        zero = np.zeros(inc.shape[:-2] + (1, inc.shape[-1]))
        return np.concatenate([zero, np.cumsum(inc, axis=-2)], axis=-2)

    def coarsen(self, factor: int) -> "BrownianDriver":
        """Sum consecutive blocks of ``factor`` increments."""
        if factor < 1 or self.steps % factor:
            raise ValidationError(f"cannot coarsen {self.steps} steps by {factor}")
        inc = self.increments
        shape = inc.shape[:-2] + (self.steps // factor, factor, inc.shape[-1])
        return BrownianDriver(inc.reshape(shape).sum(axis=-2), self.n_price, self.seed, self.path_indices)

    def tail(self, index: int) -> "BrownianDriver":
        return BrownianDriver(self.increments[..., index:, :], self.n_price, self.seed, self.path_indices)


def stream_key(seed: int) -> np.ndarray:
    """128-bit Philox key derived from a 64-bit master seed."""
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).generate_state(2, np.uint64)


def stream_normals(key: np.ndarray, path: int, column: int, count: int, branch: int = 0) -> np.ndarray:
    """Standard normals for one ``(path, branch, column)`` stream.

    The stream is Philox4x64-10 with counter ``[0, branch, column, path]``;
    each raw 64-bit word ``r`` becomes ``u = ((r >> 11) + 0.5) / 2**53`` and
    then ``ndtri(u)``. Streams never overlap, so adding paths or columns
    leaves existing streams untouched.
    """
    bg = np.random.Philox(counter=[0, branch, column, path], key=key)
    raw = bg.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def sample_driver(grid: TimeGrid, N: int, seed: int, path_index: int,
                  n_flow: int | None = None, branch: int = 0) -> BrownianDriver:
    """Driver for a single path: ``N`` price columns plus ``n_flow`` flow columns."""
    drv = sample_drivers(grid, N, seed, [path_index], n_flow=n_flow, branch=branch)
    return BrownianDriver(drv.increments[0], N, seed, drv.path_indices)


def sample_drivers(grid: TimeGrid, N: int, seed: int, path_indices,
                   n_flow: int | None = None, branch: int = 0) -> BrownianDriver:
    """Batch version of :func:`sample_driver`; shape ``(paths, steps, dim)``."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    n_flow = N if n_flow is None else n_flow
    dim = N + n_flow
    path_indices = np.asarray(path_indices, dtype=np.int64).reshape(-1)
    key = stream_key(seed)
    out = np.empty((path_indices.size, grid.steps, dim))
    for p, path in enumerate(path_indices):
        for col in range(dim):
            out[p, :, col] = stream_normals(key, int(path), col, grid.steps, branch)
    out *= np.sqrt(grid.dt)
    return BrownianDriver(out, N, seed, path_indices)


@dataclass(frozen=True)
class AssetPaths:
    """Prices ``c[..., k, i]`` at the grid nodes."""

    grid: TimeGrid
    prices: np.ndarray
    valid: np.ndarray = field(default=None)
    diagnostics: tuple[str, ...] = ()

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.prices, axis=-2)


def simulate_assets(params: MarketParams, driver: BrownianDriver, grid: TimeGrid,
                    c_start=None) -> AssetPaths:
    """Exact log-space stepping with coefficients frozen at left endpoints.

    ``c_start`` overrides ``params.c0`` (used when ``grid`` is a tail grid and
    paths continue from observed prices).
    """
    N = params.N
    if driver.n_price < N:
        raise ValidationError(f"driver has {driver.n_price} price columns, need {N}")
    if driver.steps != grid.steps:
        raise ValidationError(f"driver has {driver.steps} steps, grid has {grid.steps}")
    t = grid.left_nodes
    mu = params.mu.at(t)                      # (K, N)
    sig = params.sigma.at(t)                  # (K, N, N)
    dB = driver.price[..., :N]                # (..., K, N)
    drift = (mu - 0.5 * np.sum(sig**2, axis=-1)) * grid.dt
    shock = np.sum(sig * dB[..., None, :], axis=-1)
    logc = np.cumsum(drift + shock, axis=-2)
    c0 = params.c0 if c_start is None else np.asarray(c_start, dtype=float)
    c0 = np.broadcast_to(c0, logc.shape[:-2] + (N,))
    with np.errstate(over="ignore", invalid="ignore"):
        prices = np.concatenate([c0[..., None, :], c0[..., None, :] * np.exp(logc)], axis=-2)
    valid = np.all(np.isfinite(prices), axis=(-2, -1)) & np.all(prices > 0, axis=(-2, -1))
    diag = ()
    if not np.all(valid):
        diag = (f"{int(np.size(valid) - np.count_nonzero(valid))} path(s) overflowed",)
    return AssetPaths(grid, prices, valid, diag)
