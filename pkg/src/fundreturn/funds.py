"""Fund unit accounting driven by simulated asset prices.

Each fund ``i`` holds ``u_ij`` units of asset ``j``; its wealth is split into
``k_i`` participation units of value ``w_i``. Price moves change ``w_i``,
transfers between funds and net contributions change ``k_i``.

Holdings are rebalanced to target weights ``pi_ij`` at every node, so
``k_i w_i = sum_j u_ij c_j`` holds by construction. Between nodes the state is
advanced with a left-endpoint (Ito) Euler step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .market import AssetPaths, BrownianDriver, PiecewiseConstant, TimeGrid, ValidationError, as_piecewise

__all__ = [
    "FundControls",
    "FundState",
    "FundPaths",
    "ResidualReport",
    "derive_holdings",
    "step_fund_state",
    "simulate_funds",
    "consistency_residuals",
]

POSITIVITY_FLOOR = 1e-9


@dataclass(frozen=True)
class FundControls:
    """Initial state and deterministic controls of ``n`` funds.

    weights:   (n, N) rebalancing fractions, rows sum to 1
    transfers: (n, n) unit transfer intensities kappa_ij >= 0, zero diagonal
    flow_drift, flow_vol: (n,) drift alpha_i and volatility beta_i of net flows
    """

    k0: np.ndarray
    w0: np.ndarray
    weights: PiecewiseConstant
    transfers: PiecewiseConstant
    flow_drift: PiecewiseConstant
    flow_vol: PiecewiseConstant

    def __post_init__(self):
        k0 = np.asarray(self.k0, dtype=float).reshape(-1)
        w0 = np.asarray(self.w0, dtype=float).reshape(-1)
        object.__setattr__(self, "k0", k0)
        object.__setattr__(self, "w0", w0)
        for name in ("weights", "transfers", "flow_drift", "flow_vol"):
            object.__setattr__(self, name, as_piecewise(getattr(self, name)))
        n = k0.size
        if n < 1 or w0.size != n:
            raise ValidationError("k0 and w0 must be non-empty and of equal length")
        if np.any(k0 <= 0) or np.any(w0 <= 0):
            raise ValidationError("k0 and w0 must be > 0")
        if len(self.weights.shape) != 2 or self.weights.shape[0] != n:
            raise ValidationError(f"weights must have shape ({n}, N)")
        for seg, pi in enumerate(self.weights.values):
            for row, total in enumerate(pi.sum(axis=1)):
                # Exact summation; tolerance only absorbs decimal input rounding.
                if abs(total - 1.0) > 1e-12:
                    raise ValidationError(f"weights row {row + 1} sums to {total:.12g} (segment {seg})")
        if self.transfers.shape != (n, n):
            raise ValidationError(f"transfers must have shape ({n}, {n})")
        if np.any(self.transfers.values < 0):
            raise ValidationError("transfer intensities must be >= 0")
        if np.any(np.diagonal(self.transfers.values, axis1=1, axis2=2) != 0):
            raise ValidationError("transfer intensity kappa_ii must be 0")
        for name in ("flow_drift", "flow_vol"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have shape ({n},)")

    @property
    def n(self) -> int:
        return self.k0.size

    @property
    def N(self) -> int:
        return self.weights.shape[1]

    @property
    def drift_only_flows(self) -> bool:
        return not np.any(self.flow_vol.values)

    @classmethod
    def simple(cls, k0, w0, weights, transfers=None, flow_drift=None, flow_vol=None) -> "FundControls":
        """Constant controls; omitted transfers and flows default to zero."""
        n = np.asarray(k0).size
        return cls(
            k0, w0, np.asarray(weights, dtype=float),
            np.zeros((n, n)) if transfers is None else transfers,
            np.zeros(n) if flow_drift is None else flow_drift,
            np.zeros(n) if flow_vol is None else flow_vol,
        )


def derive_holdings(weights, fund_wealth, prices) -> np.ndarray:
    """Asset units ``u_ij = pi_ij A_i / c_j`` realizing the target weights.

    Broadcasts over leading axes: ``weights`` (..., n, N), ``fund_wealth``
    (..., n), ``prices`` (..., N).
    """
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0):
        raise ValidationError("prices must be > 0 to derive holdings")
    return np.asarray(weights) * np.asarray(fund_wealth)[..., :, None] / prices[..., None, :]


@dataclass(frozen=True)
class FundState:
    """State of all funds at one node; arrays carry an optional batch axis."""

    u: np.ndarray  # (..., n, N)
    w: np.ndarray  # (..., n)
    k: np.ndarray  # (..., n)
    D: np.ndarray  # (..., n)

    @property
    def wealth(self) -> np.ndarray:
        return self.k * self.w


def step_fund_state(state: FundState, prices, dc, dB_flow, dt: float, weights, transfers,
                    flow_drift, flow_vol, dk=None) -> FundState:
    """One Euler step from ``t_k`` to ``t_{k+1}``.

    ``prices`` are c(t_k), ``dc`` the exact price increments over the step and
    ``dB_flow`` the flow-driver increments. Controls are their values at t_k.
    ``dk`` overrides the unit-count increment (prescribed unit paths); the net
    flow then becomes whatever finances it, ``dD_i = w_i dk_i``.
    """
    u, w, k, D = state.u, state.w, state.k, state.D
    dw = np.sum(u * dc[..., None, :], axis=-1) / k
    if dk is None:
        outflow = w * np.sum(transfers, axis=-1)
        inflow = np.sum(transfers * w[..., :, None], axis=-2)
        dk = (inflow - outflow + flow_drift) * dt / w + flow_vol / w * dB_flow
        dD = flow_drift * dt + flow_vol * dB_flow
    else:
        dD = w * dk
    w1 = w + dw
    k1 = k + dk
    u1 = weights * (k1 * w1)[..., :, None] / (prices + dc)[..., None, :]
    return FundState(u1, w1, k1, D + dD)


@dataclass(frozen=True)
class FundPaths:
    """Trajectories of all fund state variables on the grid.

    Arrays have shape ``(paths, steps + 1, n)`` (holdings add a trailing
    asset axis). ``unit_vol[..., k, i]`` is the diffusion coefficient
    ``beta_i / w_i`` of ``k_i`` at the left node ``t_k``.
    """

    grid: TimeGrid
    prices: np.ndarray
    u: np.ndarray
    w: np.ndarray
    k: np.ndarray
    D: np.ndarray
    unit_vol: np.ndarray
    valid: np.ndarray
    first_invalid: np.ndarray
    drift_only: bool = True
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.w.shape[-1]

    @property
    def M(self) -> int:
        return self.w.shape[0]

    @property
    def A_i(self) -> np.ndarray:
        return self.k * self.w

    @property
    def A(self) -> np.ndarray:
        return np.sum(self.A_i, axis=-1)

    @property
    def A_star(self) -> np.ndarray:
        Ai = self.A_i
        return Ai / np.sum(Ai, axis=-1, keepdims=True)

    @property
    def invalid_count(self) -> int:
        return int(self.valid.size - np.count_nonzero(self.valid))

    def select(self, mask) -> "FundPaths":
        """Subset of paths (boolean mask or index array)."""
        return replace(
            self, prices=self.prices[mask], u=self.u[mask], w=self.w[mask], k=self.k[mask],
            D=self.D[mask], unit_vol=self.unit_vol[mask], valid=self.valid[mask],
            first_invalid=self.first_invalid[mask],
        )

    def state_at(self, index: int) -> FundState:
        return FundState(self.u[:, index], self.w[:, index], self.k[:, index], self.D[:, index])


def simulate_funds(controls: FundControls, assets: AssetPaths, driver: BrownianDriver,
                   initial: FundState | None = None, unit_path=None,
                   floor: float = POSITIVITY_FLOOR) -> FundPaths:
    """Simulate all funds along the given asset paths.

    ``initial`` continues from an existing state (tail grids); its arrays
    broadcast against the path batch. ``unit_path`` (steps+1, n) prescribes
    ``k_i(t)`` exactly; it requires ``flow_vol == 0``.

    Paths on which any ``w_i``, ``k_i`` or ``A_i`` falls to ``floor`` times its
    starting value are marked invalid at the first failing node and frozen
    from there on.
    """
    grid = assets.grid
    c = assets.prices
    if c.ndim == 2:
        c = c[None]
    M, K1, N = c.shape
    K = K1 - 1
    if driver.steps != K:
        raise ValidationError("driver and asset paths are on different grids")
    if controls.N != N:
        raise ValidationError(f"controls expect {controls.N} assets, market has {N}")
    n = controls.n
    dB = driver.flow
    if dB.ndim == 2:
        dB = dB[None]
    dB = np.broadcast_to(dB, (M, K, dB.shape[-1]))
    if dB.shape[-1] < n:
        raise ValidationError(f"driver has {dB.shape[-1]} flow columns, need {n}")
    dB = dB[..., :n]
    if unit_path is not None:
        if not controls.drift_only_flows:
            raise ValidationError("prescribed unit paths require flow_vol == 0")
        unit_path = np.asarray(unit_path, dtype=float)
        if unit_path.shape != (K1, n) or np.any(unit_path <= 0):
            raise ValidationError(f"unit_path must be positive with shape ({K1}, {n})")

    t = grid.left_nodes
    pi_nodes = controls.weights.at(grid.nodes)
    kap_t = controls.transfers.at(t)
    alpha_t = controls.flow_drift.at(t)
    beta_t = controls.flow_vol.at(t)

    if initial is None:
        w0 = np.broadcast_to(controls.w0, (M, n))
        k0 = np.broadcast_to(controls.k0 if unit_path is None else unit_path[0], (M, n))
        u0 = derive_holdings(pi_nodes[0], k0 * w0, c[:, 0])
        initial = FundState(u0, w0, k0, np.zeros((M, n)))
    else:
        initial = FundState(*(np.broadcast_to(getattr(initial, f), s) for f, s in
                              (("u", (M, n, N)), ("w", (M, n)), ("k", (M, n)), ("D", (M, n)))))

    u = np.empty((M, K1, n, N))
    w = np.empty((M, K1, n))
    k = np.empty((M, K1, n))
    D = np.empty((M, K1, n))
    vol = np.empty((M, K, n))
    u[:, 0], w[:, 0], k[:, 0], D[:, 0] = initial.u, initial.w, initial.k, initial.D
    valid = assets.valid.copy() if assets.valid is not None else np.ones(M, bool)
    valid = np.broadcast_to(valid, (M,)).copy()
    first_invalid = np.where(valid, -1, 0)
    w_lo, k_lo = floor * initial.w, floor * initial.k
    A_lo = floor * initial.wealth

    dc = np.diff(c, axis=1)
    state = initial
    for j in range(K):
        dk = None if unit_path is None else np.broadcast_to(unit_path[j + 1] - unit_path[j], (M, n))
        vol[:, j] = beta_t[j] / state.w
        new = step_fund_state(state, c[:, j], dc[:, j], dB[:, j], grid.dt,
                              pi_nodes[j + 1], kap_t[j],
                              alpha_t[j], beta_t[j], dk=dk)
        with np.errstate(invalid="ignore"):
            bad = ~(np.all(new.w > w_lo, axis=-1) & np.all(new.k > k_lo, axis=-1)
                    & np.all(new.wealth > A_lo, axis=-1)) & valid
        if np.any(bad):
            first_invalid[bad] = j + 1
            valid &= ~bad
        if not np.all(valid):
            frozen = ~valid
            new = FundState(*(np.where(frozen.reshape((M,) + (1,) * (getattr(new, f).ndim - 1)),
                                       getattr(state, f), getattr(new, f)) for f in ("u", "w", "k", "D")))
        u[:, j + 1], w[:, j + 1], k[:, j + 1], D[:, j + 1] = new.u, new.w, new.k, new.D
        state = new

    diag = ()
    bad_count = int(M - np.count_nonzero(valid))
    if bad_count:
        diag = (f"{bad_count} of {M} path(s) hit the positivity floor or overflowed",)
    return FundPaths(grid, c, u, w, k, D, vol, valid, first_invalid,
                     drift_only=controls.drift_only_flows, diagnostics=diag)


@dataclass(frozen=True)
class ResidualReport:
    """Worst-case residuals of the accounting identities over the grid.

    holdings:    max_k |A_i - sum_j u_ij c_j| / A_i
    aggregation: max_k |sum over steps of (sum_i w_i dk_i - dD)| / A(0)
    flow:        max_k |sum over steps of (dA - sum_i k_i dw_i - dD)| / A(0)
    """

    holdings: float
    aggregation: float
    flow: float
    tolerances: dict
    per_path_flow: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return (self.holdings <= self.tolerances["holdings"]
                and self.aggregation <= self.tolerances["aggregation"]
                and self.flow <= self.tolerances["flow"])

    def to_dict(self) -> dict:
        return {"holdings": self.holdings, "aggregation": self.aggregation, "flow": self.flow,
                "tolerances": dict(self.tolerances), "pass": self.passed}


DEFAULT_RESIDUAL_TOLERANCES = {"holdings": 1e-10, "aggregation": 1e-10, "flow": 5e-3}


def consistency_residuals(paths: FundPaths, assets: AssetPaths | None = None,
                          tolerances: dict | None = None) -> ResidualReport:
    """Residuals of the wealth identity, flow aggregation and flow identity.

    Only valid paths are included. Increments use left-endpoint ``k_i`` and
    ``w_i``.
    """
    tol = dict(DEFAULT_RESIDUAL_TOLERANCES, **(tolerances or {}))
    sel = paths.select(paths.valid)
    c = sel.prices if assets is None else np.asarray(assets.prices)[paths.valid]
    Ai = sel.A_i
    held = np.sum(sel.u * c[..., None, :], axis=-1)
    holdings = np.max(np.abs(Ai - held) / Ai, initial=0.0)

    A0 = sel.A[:, :1]
    dk, dw, dD = np.diff(sel.k, axis=1), np.diff(sel.w, axis=1), np.diff(sel.D, axis=1)
    w_left, k_left = sel.w[:, :-1], sel.k[:, :-1]
    agg = np.cumsum(np.sum(w_left * dk - dD, axis=-1), axis=1) / A0
    flow = np.cumsum(np.diff(sel.A, axis=1) - np.sum(k_left * dw + dD, axis=-1), axis=1) / A0
    per_path = np.max(np.abs(flow), axis=1, initial=0.0)
    return ResidualReport(float(holdings), float(np.max(np.abs(agg), initial=0.0)),
                          float(np.max(per_path, initial=0.0)), tol, per_path)
