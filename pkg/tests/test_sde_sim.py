import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from varswap.closed_form import reciprocal_bessel3_mean
from varswap.errors import GridMismatch, NumericalBreakdown, RangeViolation, ResourceLimit
from varswap.models import CEV, BlackScholes, JumpDiffusion, ThreeHalves, VolOfVol
from varswap.rng import BLOCK_SIZE, RngStream, block_range
from varswap.sde_sim import (
    Scheme,
    TimeGrid,
    iter_path_blocks,
    simulate_paths,
    simulate_reciprocal_bessel3,
)

EXACT, EULER = Scheme.EXACT, Scheme.EULER


def _zscore(samples, expected):
    return abs(samples.mean() - expected) / (samples.std(ddof=1) / math.sqrt(samples.size))


def test_time_grid():
    g = TimeGrid(2.0, 4, 3)
    assert g.steps == 12 and g.dt == pytest.approx(2 / 12)
    assert np.allclose(g.times()[::3], [0, 0.5, 1.0, 1.5, 2.0])
    assert g.stride(2) == 6
    with pytest.raises(GridMismatch):
        g.stride(5)
    assert TimeGrid(1.0, 4).resolved(EULER).k == 8
    assert TimeGrid(1.0, 4).resolved(EXACT).k == 1


def test_black_scholes_terminal_moments():
    b = simulate_paths(BlackScholes(100, 0.2), TimeGrid(1.0, 252), 20_000, 1)
    r = b.log_price[:, -1] - math.log(100)
    assert _zscore(r, -0.02) < 4
    # variance of the sample variance for Gaussian data: 2 s^4 / (N - 1)
    assert abs(r.var(ddof=1) - 0.04) < 4 * 0.04 * math.sqrt(2 / (r.size - 1))


def test_log_price_starts_exactly_at_s0():
    for spec in (BlackScholes(123.4, 0.3), VolOfVol(7.7, 0.04, 1, 0.5, 1, 1, 0.3),
                 ThreeHalves(3.3, 0.04, 0.1, -1, 1), CEV(1.5, 1.2), JumpDiffusion(9, 0.2, 3, 0, 0.1)):
        b = simulate_paths(spec, TimeGrid(1.0, 8), 50, 2)
        assert (b.log_price[:, 0] == math.log(spec.s0)).all()


@pytest.mark.parametrize("scheme", [EXACT, EULER])
def test_cir_mean_and_variance(scheme):
    kappa, theta, eta, w0, t = 1.0, 0.04, 0.3, 0.09, 1.0
    spec = VolOfVol(100, 0.04, w0, kappa, theta, eta, 0.0)
    n_paths = 100_000 if scheme is EXACT else 20_000
    b = simulate_paths(spec, TimeGrid(t, 10), n_paths, 3, scheme)
    w = b.w[:, -1]
    mean = theta + (w0 - theta) * math.exp(-kappa * t)
    assert mean == pytest.approx(0.0583940, abs=1e-7)
    var = w0 * eta**2 / kappa * (math.exp(-kappa * t) - math.exp(-2 * kappa * t)) + \
        theta * eta**2 / (2 * kappa) * (1 - math.exp(-kappa * t)) ** 2
    tol = 4 if scheme is EXACT else 6
    assert _zscore(w, mean) < tol
    # stderr of the sample variance from the fourth central moment
    m4 = np.mean((w - w.mean()) ** 4)
    se_var = math.sqrt((m4 - w.var() ** 2) / w.size)
    assert abs(w.var(ddof=1) - var) < tol * se_var


def test_driver_correlation():
    # invert the Euler steps to recover the W and Z increments
    kappa, theta, eta, rho = 2.0, 0.04, 0.2, -0.5
    spec = VolOfVol(100, 0.04, 0.04, kappa, theta, eta, rho)
    grid = TimeGrid(1.0, 16, 1)
    b = simulate_paths(spec, grid, 4000, 4, EULER)
    dt = grid.dt
    w0, w1 = b.w[:, :-1], b.w[:, 1:]
    # truncated steps cannot be inverted
    keep = (w0 > 0) & (w1 > 0)
    d_lv = np.diff(np.log(b.v), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dW = (d_lv + 0.5 * w0 * dt) / np.sqrt(w0)
        dZ = (w1 - w0 - kappa * (theta - w0) * dt) / (eta * np.sqrt(w0))
    dW, dZ = dW[keep], dZ[keep]
    assert keep.mean() > 0.95
    r = np.corrcoef(dW, dZ)[0, 1]
    se = (1 - rho * rho) / math.sqrt(dW.size)
    assert abs(r - rho) < 4 * se


def test_jump_diffusion_without_jumps_equals_black_scholes():
    grid = TimeGrid(1.0, 50)
    a = simulate_paths(JumpDiffusion(100, 0.2, 0.0, -0.1, 0.2), grid, 3000, 5)
    b = simulate_paths(BlackScholes(100, 0.2), grid, 3000, 5)
    assert np.array_equal(a.log_price, b.log_price)
    assert a.jump_log.size == 0


def test_jump_records():
    spec = JumpDiffusion(100, 0.0, 4.0, -0.2, 0.3)
    grid = TimeGrid(1.0, 20, 5)
    b = simulate_paths(spec, grid, 2000, 6)
    assert (b.jump_size > -1).all()
    assert b.jump_log.size == pytest.approx(4.0 * 2000, rel=0.1)
    # with sigma = 0 the log-price moves only by jumps and the drift
    drift = -spec.lam * spec.mean_jump * grid.dt
    path = int(b.jump_path[0])
    steps = np.diff(b.log_price[path]) - drift
    expected = np.zeros(grid.steps)
    for idx, x in b.jumps(path):
        expected[idx - 1] += math.log1p(x)
    assert np.allclose(steps, expected, atol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [VolOfVol(100, 0.04, 1, 0.5, 1, 1, 0.7), ThreeHalves(100, 0.04, 0.1, -1, 1), JumpDiffusion(100, 0.2, 3, 0, 0.1)],
)
@pytest.mark.parametrize("scheme", [EXACT, EULER])
def test_determinism_across_workers_and_path_counts(spec, scheme):
    grid = TimeGrid(1.0, 8)
    one = simulate_paths(spec, grid, 2500, 7, scheme, workers=1)
    many = simulate_paths(spec, grid, 2500, 7, scheme, workers=4)
    assert np.array_equal(one.log_price, many.log_price)
    assert np.array_equal(one.v, many.v)
    fewer = simulate_paths(spec, grid, 1100, 7, scheme)
    assert np.array_equal(fewer.log_price, one.log_price[:1100])
    tail = simulate_paths(spec, grid, 100, 7, scheme, start=2000)
    assert np.array_equal(tail.log_price, one.log_price[2000:2100])


def test_different_seeds_differ():
    grid = TimeGrid(1.0, 4)
    a = simulate_paths(BlackScholes(100, 0.2), grid, 10, 1)
    b = simulate_paths(BlackScholes(100, 0.2), grid, 10, 2)
    assert not np.array_equal(a.log_price, b.log_price)


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**7))
def test_rng_stream_for_path(seed, index):
    stream, lane = RngStream.for_path(seed, index)
    assert stream.block * BLOCK_SIZE + lane == index
    assert stream.block in block_range(index, index + 1)


@pytest.mark.parametrize("scheme", [EXACT, EULER])
def test_variances_nonnegative(scheme):
    spec = VolOfVol(100, 0.04, 0.5, 0.3, 0.2, 2.0, -0.4)  # Feller condition fails for w
    b = simulate_paths(spec, TimeGrid(1.0, 16), 2000, 8, scheme)
    assert (b.v >= 0).all() and (b.w >= 0).all()


def test_resource_limit():
    with pytest.raises(ResourceLimit):
        simulate_paths(BlackScholes(100, 0.2), TimeGrid(1.0, 1000), 10**6, 1, memory_budget=10**6)


def test_numerical_breakdown():
    with pytest.raises(NumericalBreakdown):
        # coarse Euler steps push R = 1/v to zero, making v infinite
        simulate_paths(ThreeHalves(100, 10.0, 5.0, -1.0, 3.0), TimeGrid(1.0, 4, 1), 1000, 1, EULER)


def test_bad_inputs():
    with pytest.raises(RangeViolation):
        simulate_paths(BlackScholes(100, 0.2), TimeGrid(1.0, 4), 0, 1)
    with pytest.raises(RangeViolation):
        simulate_paths(BlackScholes(100, 0.2), TimeGrid(1.0, 4), 10, -1)


def test_reciprocal_bessel():
    b = simulate_reciprocal_bessel3(1.0, TimeGrid(1.0, 50), 100_000, 9)
    x = b.aux["x"]
    assert (x[:, 0] == 1.0).all()
    assert x[:, -1].mean() < 1.0
    assert _zscore(x[:, -1], reciprocal_bessel3_mean(1.0, 1.0)) < 4
    assert (b.log_price <= 0).all()
    assert np.array_equal(b.log_price, -x - 0.5 * b.aux["qv"])
