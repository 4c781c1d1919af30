import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import run_paths, two_fund_doc
from fundreturn import (FundControls, FundState, MarketParams, TimeGrid, ValidationError, consistency_residuals,
                        derive_holdings, sample_drivers, scenario_from_dict, simulate_assets, simulate_funds,
                        simulate_nested, step_fund_state)
from fundreturn.market import BrownianDriver


def test_derive_holdings_examples():
    np.testing.assert_array_equal(derive_holdings([[1.0]], [100.0], [4.0]), [[25.0]])
    np.testing.assert_array_equal(derive_holdings([[0.5, 0.5]], [10.0], [1.0, 2.0]), [[5.0, 2.5]])


@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.floats(1e-3, 1e6),
       st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3))
def test_holdings_reproduce_wealth(raw, wealth, prices):
    pi = np.array(raw) / np.sum(raw)
    u = derive_holdings(pi[None], [wealth], prices)
    assert abs(np.sum(u * prices) - wealth) <= 1e-12 * wealth


def test_derive_holdings_rejects_nonpositive_price():
    with pytest.raises(ValidationError):
        derive_holdings([[0.5, 0.5]], [1.0], [1.0, 0.0])


def _state(w, k, pi, c):
    w, k = np.asarray(w, float), np.asarray(k, float)
    return FundState(derive_holdings(pi, k * w, c), w, k, np.zeros_like(w))


def test_frozen_step_keeps_state():
    pi = np.array([[0.7, 0.3], [0.2, 0.8]])
    c = np.array([1.0, 2.0])
    st0 = _state([1.0, 2.0], [100.0, 50.0], pi, c)
    st1 = step_fund_state(st0, c, np.zeros(2), np.zeros(2), 0.01, pi, np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    for f in ("u", "w", "k", "D"):
        np.testing.assert_array_equal(getattr(st1, f), getattr(st0, f))


def test_transfer_step():
    pi = np.array([[1.0], [1.0]])
    c = np.array([1.0])
    st0 = _state([1.5, 3.0], [10.0, 10.0], pi, c)
    kappa = np.array([[0.0, 1.0], [0.0, 0.0]])
    dt = 0.01
    st1 = step_fund_state(st0, c, np.zeros(1), np.zeros(2), dt, pi, kappa, np.zeros(2), np.zeros(2))
    dk = st1.k - st0.k
    assert dk[0] == pytest.approx(-dt, rel=1e-12)
    assert dk[1] == pytest.approx(1.5 / 3.0 * dt, rel=1e-12)
    # value leaving fund 1 equals value entering fund 2
    assert abs(np.sum(st0.w * dk)) < 1e-14


def test_single_fund_tracks_deterministic_price():
    K = 400
    grid, _, assets, funds = run_paths(MarketParams([1.0], [0.05], [[0.0]]),
                                       FundControls.simple([10.0], [1.0], [[1.0]]), steps=K, paths=1)
    ratios = funds.w[0, 1:, 0] / funds.w[0, :-1, 0]
    np.testing.assert_allclose(ratios, np.exp(0.05 * grid.dt), rtol=1e-12)
    assert funds.w[0, -1, 0] == pytest.approx(np.exp(0.05), rel=1e-12)


def test_frozen_units_wealth_decomposition(stochastic_market):
    market = MarketParams([1.0, 2.0], [0.05, -0.03], np.zeros((2, 2)))
    controls = FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]])
    _, _, _, f = run_paths(market, controls, steps=64, paths=1)
    np.testing.assert_array_equal(f.k[0], np.broadcast_to(controls.k0, f.k[0].shape))
    lhs = f.A[0] / f.A[0, 0]
    rhs = np.sum(f.A_star[0, 0] * f.w[0] / f.w[0, 0], axis=-1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13)


def test_holdings_identity_and_shares(stochastic_market, two_controls):
    _, _, assets, f = run_paths(stochastic_market, two_controls, paths=16)
    held = np.sum(f.u * f.prices[..., None, :], axis=-1)
    assert np.max(np.abs(held - f.A_i) / f.A_i) < 1e-10
    assert np.max(np.abs(f.A_star.sum(axis=-1) - 1.0)) < 1e-12
    assert np.all(f.A_i > 0)


def test_flow_reconstruction(stochastic_market, two_controls):
    _, _, _, f = run_paths(stochastic_market, two_controls, paths=16)
    lhs = np.sum(f.w[:, :-1] * np.diff(f.k, axis=1), axis=(1, 2))
    rhs = np.sum(f.D[:, -1] - f.D[:, 0], axis=-1)
    assert np.max(np.abs(lhs - rhs)) < 1e-8 * np.min(f.A[:, 0])


def test_pure_transfers_conserve_value(stochastic_market):
    controls = FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]],
                                   transfers=[[0.0, 20.0], [7.0, 0.0]])
    _, _, _, f = run_paths(stochastic_market, controls, paths=8)
    moved = np.sum(f.w[:, :-1] * np.diff(f.k, axis=1), axis=-1)
    assert np.max(np.abs(moved) / f.A[:, :-1]) < 1e-12
    # unit totals are not conserved once the w_i differ
    assert np.ptp(f.k.sum(axis=-1)) > 1e-3


def test_noise_free_run_is_bitwise_deterministic():
    market = MarketParams([1.0, 2.0], [0.05, 0.02], np.zeros((2, 2)))
    controls = FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]],
                                   transfers=[[0.0, 5.0], [3.0, 0.0]], flow_drift=[10.0, -4.0])
    a = run_paths(market, controls, paths=1, seed=1)[3]
    b = run_paths(market, controls, paths=1, seed=99)[3]
    for f in ("u", "w", "k", "D"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_deterministic_residuals_at_rounding():
    market = MarketParams([1.0, 2.0], [0.05, 0.02], np.zeros((2, 2)))
    controls = FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]],
                                   transfers=[[0.0, 5.0], [3.0, 0.0]], flow_drift=[10.0, -4.0])
    f = run_paths(market, controls, paths=1)[3]
    rep = consistency_residuals(f)
    assert rep.holdings < 1e-10 and rep.aggregation < 1e-10
    # linear price drift still leaves an O(dt^2) per-step rebalancing term
    assert rep.flow < 1e-5


def test_stochastic_residuals_within_tolerance(two_fund):
    from fundreturn import simulate
    _, f = simulate(two_fund, paths=32)
    rep = consistency_residuals(f)
    assert rep.passed and rep.flow < 5e-3
    assert rep.to_dict()["pass"] is True


def _flow_rms(doc, counts, paths=32):
    runs = simulate_nested(scenario_from_dict(doc), counts, paths)
    return [float(np.sqrt(np.mean(consistency_residuals(f).per_path_flow ** 2))) for _, f in runs.values()]


def test_flow_residual_halves_with_dt_without_flow_noise():
    errs = _flow_rms(two_fund_doc(flow_vol=[0.0, 0.0]), (64, 128, 256, 512, 1024))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 1.5) & (ratios <= 3.0)), ratios


def test_flow_residual_order_with_flow_noise():
    # with beta > 0 the residual picks up sum dk dw, a strong-order-1/2 covariation
    errs = _flow_rms(two_fund_doc(), (64, 256, 1024))
    order = -np.polyfit(np.log([64, 256, 1024]), np.log(errs), 1)[0]
    assert 0.3 < order < 0.8


def test_floor_violation_invalidates_and_freezes():
    grid = TimeGrid(1.0, 4)
    market = MarketParams([1.0], [0.0], [[0.1]])
    controls = FundControls.simple([1.0], [1.0], [[1.0]], flow_drift=[-10.0])
    drv = BrownianDriver(np.zeros((2, 4, 2)), 1)
    f = simulate_funds(controls, simulate_assets(market, drv, grid), drv)
    assert f.invalid_count == 2 and f.diagnostics
    j = int(f.first_invalid[0])
    assert j == 1
    assert np.all(f.k[0, j:] == f.k[0, j - 1])


def test_control_validation():
    with pytest.raises(ValidationError, match="weights row 2"):
        FundControls.simple([1.0, 1.0], [1.0, 1.0], [[1.0], [0.9]])
    with pytest.raises(ValidationError):
        FundControls.simple([1.0, 1.0], [1.0, 1.0], [[1.0], [1.0]], transfers=[[0.0, -1.0], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        FundControls.simple([1.0, 1.0], [1.0, 1.0], [[1.0], [1.0]], transfers=[[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        FundControls.simple([0.0], [1.0], [[1.0]])


def test_grid_mismatch_rejected(stochastic_market, two_controls):
    g = TimeGrid(1.0, 8)
    assets = simulate_assets(stochastic_market, sample_drivers(g, 2, 0, [0], n_flow=2), g)
    with pytest.raises(ValidationError):
        simulate_funds(two_controls, assets, sample_drivers(TimeGrid(1.0, 16), 2, 0, [0], n_flow=2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_shares_sum_to_one(seed, k12, k21):
    market = MarketParams([1.0, 2.0], [0.05, 0.02], [[0.3, 0.0], [0.1, 0.2]])
    controls = FundControls.simple([100.0, 50.0], [1.0, 2.0], [[0.7, 0.3], [0.2, 0.8]],
                                   transfers=[[0.0, k12], [k21, 0.0]], flow_vol=[4.0, 2.0])
    f = run_paths(market, controls, steps=32, paths=4, seed=seed)[3]
    v = f.valid
    assert np.max(np.abs(f.A_star[v].sum(axis=-1) - 1.0), initial=0.0) < 1e-12
