import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fundreturn import MarketParams, PiecewiseConstant, ValidationError, build_time_grid
from fundreturn import sample_driver, sample_drivers, simulate_assets
from fundreturn.market import BrownianDriver


def test_one_step_grid():
    g = build_time_grid(1, 1)
    np.testing.assert_array_equal(g.nodes, [0.0, 1.0])
    assert g.dt == 1.0


def test_uniform_grid():
    np.testing.assert_allclose(build_time_grid(2, 4).nodes, [0, 0.5, 1, 1.5, 2], rtol=0, atol=1e-15)


@pytest.mark.parametrize("T,steps", [(1, 0), (0, 4), (-1, 4), (1, -3)])
def test_grid_rejects_bad_input(T, steps):
    with pytest.raises(ValidationError):
        build_time_grid(T, steps)


@given(st.floats(0.01, 50.0), st.integers(1, 5000))
def test_grid_invariants(T, steps):
    g = build_time_grid(T, steps)
    nodes = g.nodes
    assert nodes.size == steps + 1
    assert np.all(np.diff(nodes) > 0)
    assert np.max(np.abs(nodes - np.arange(steps + 1) * g.dt)) < 1e-12 * T


def test_node_index_requires_grid_node():
    g = build_time_grid(1, 4)
    assert g.node_index(0.5) == 2
    with pytest.raises(ValidationError):
        g.node_index(0.3)
    assert g.node_index(0.3, snap=True) == 1


def test_driver_shape_and_determinism():
    g = build_time_grid(1, 1)
    d = sample_driver(g, 2, seed=5, path_index=0)
    assert d.increments.shape == (1, 4)
    again = sample_driver(g, 2, seed=5, path_index=0)
    np.testing.assert_array_equal(d.increments, again.increments)
    np.testing.assert_array_equal(d.paths()[0], 0.0)


def test_driver_streams_do_not_depend_on_batch():
    g = build_time_grid(1, 64)
    batch = sample_drivers(g, 2, 9, [0, 1, 2, 3])
    single = sample_driver(g, 2, 9, 2)
    np.testing.assert_array_equal(batch.increments[2], single.increments)
    # adding flow columns keeps the price columns untouched
    wider = sample_driver(g, 2, 9, 2, n_flow=5)
    np.testing.assert_array_equal(wider.price, single.price)


def test_driver_distinct_paths_and_seeds_differ():
    g = build_time_grid(1, 32)
    a = sample_driver(g, 1, 1, 0).increments
    assert not np.array_equal(a, sample_driver(g, 1, 1, 1).increments)
    assert not np.array_equal(a, sample_driver(g, 1, 2, 0).increments)


def test_driver_increment_variance():
    # 1e5 increments, dt = 0.01; CLT band ~ 4 sqrt(2/1e5) dt
    g = build_time_grid(1000.0, 100_000)
    d = sample_driver(g, 1, seed=2024, path_index=0)
    for col in range(d.dim):
        var = np.var(d.increments[:, col], ddof=1)
        assert 0.0095 <= var <= 0.0105


def test_driver_columns_uncorrelated():
    g = build_time_grid(100.0, 20_000)
    d = sample_driver(g, 2, seed=1, path_index=0)
    corr = np.corrcoef(d.increments.T)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 4 / np.sqrt(20_000)


def test_coarsen_sums_sub_increments():
    g = build_time_grid(1, 8)
    d = sample_drivers(g, 1, 0, [0, 1])
    c = d.coarsen(4)
    np.testing.assert_allclose(c.increments, d.increments.reshape(2, 2, 4, 2).sum(axis=2))
    np.testing.assert_allclose(c.paths()[:, -1], d.paths()[:, -1], rtol=1e-14)
    with pytest.raises(ValidationError):
        d.coarsen(3)


def test_zero_dynamics_keep_prices():
    g = build_time_grid(1, 16)
    m = MarketParams([1.0, 3.0], [0.0, 0.0], np.zeros((2, 2)))
    a = simulate_assets(m, sample_drivers(g, 2, 0, [0]), g)
    np.testing.assert_array_equal(a.prices[0], np.broadcast_to([1.0, 3.0], (17, 2)))


def test_deterministic_exponential():
    g = build_time_grid(1, 10)
    m = MarketParams([1.0], [0.05], [[0.0]])
    a = simulate_assets(m, sample_driver(g, 1, 0, 0), g)
    assert a.prices[-1, 0] == pytest.approx(1.0512710964, rel=1e-10)


def test_closed_form_on_fixed_driver():
    g = build_time_grid(1, 500)
    d = sample_driver(g, 1, seed=77, path_index=4)
    a = simulate_assets(MarketParams([2.0], [0.1], [[0.2]]), d, g)
    B = np.cumsum(np.concatenate([[0.0], d.increments[:, 0]]))
    expected = 2.0 * np.exp((0.1 - 0.02) * g.nodes + 0.2 * B)
    np.testing.assert_allclose(a.prices[:, 0], expected, rtol=1e-12)
    assert a.prices[0, 0] == 2.0


def test_piecewise_constant_coefficients():
    g = build_time_grid(1, 4)
    mu = PiecewiseConstant.from_segments([(0.0, [0.0]), (0.5, [0.2])])
    a = simulate_assets(MarketParams([1.0], mu, [[0.0]]), sample_driver(g, 1, 0, 0), g)
    np.testing.assert_allclose(a.prices[:, 0], [1, 1, 1, np.exp(0.05), np.exp(0.1)], rtol=1e-14)


def test_correlated_terminal_law():
    # log c_i(T) has variance sum_l sigma_il^2 T and covariance (sigma sigma^T)_12 T
    sigma = np.array([[0.2, 0.0], [0.05, 0.15]])
    g = build_time_grid(1, 4)
    d = sample_drivers(g, 2, 8, range(20_000))
    a = simulate_assets(MarketParams([1.0, 1.0], [0.0, 0.0], sigma), d, g)
    logc = np.log(a.prices[:, -1])
    cov = np.cov(logc.T)
    np.testing.assert_allclose(cov, sigma @ sigma.T, atol=4 * 0.04 * np.sqrt(2 / 20_000) + 2e-4)


def test_zero_drift_prices_are_martingales():
    g = build_time_grid(1, 8)
    d = sample_drivers(g, 2, 123, range(10_000))
    a = simulate_assets(MarketParams([1.0, 2.0], [0.0, 0.0], [[0.2, 0], [0.05, 0.15]]), d, g)
    cT = a.prices[:, -1]
    mean, se = cT.mean(axis=0), cT.std(axis=0, ddof=1) / np.sqrt(cT.shape[0])
    assert np.all(np.abs(mean - [1.0, 2.0]) < 4 * se)
    assert np.all(a.prices > 0)


def test_singular_sigma_rejected():
    with pytest.raises(ValidationError):
        MarketParams([1.0, 1.0], [0, 0], [[0.2, 0.2], [0.1, 0.1]])


@pytest.mark.parametrize("c0", [[0.0], [-1.0], [np.inf]])
def test_bad_initial_price_rejected(c0):
    with pytest.raises(ValidationError):
        MarketParams(c0, [0.0], [[0.1]])


def test_overflow_marks_path_invalid():
    g = build_time_grid(1, 4)
    d = BrownianDriver(np.full((1, 4, 2), 1e4), 1)
    a = simulate_assets(MarketParams([1.0], [0.0], [[1.0]]), d, g)
    assert not a.valid[0] and a.diagnostics


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_prices_positive_and_anchored(seed, path):
    g = build_time_grid(1, 32)
    m = MarketParams([1.5, 0.5], [0.3, -0.4], [[0.6, 0.0], [0.3, 0.5]])
    a = simulate_assets(m, sample_driver(g, 2, seed, path), g)
    assert np.all(a.prices > 0)
    np.testing.assert_array_equal(a.prices[0], [1.5, 0.5])
