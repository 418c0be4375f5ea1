import math

import numpy as np
import pytest

from relarb.engine import (benchmark_path, constant_weights_rule, market_portfolio_rule,
                           profile_rule, simulate_deflator, simulate_mean_field,
                           simulate_n_particle, ParticlePathSet)
from relarb.errors import AdmissibilityError, ConfigError, DomainError, SimulationError
from relarb.model import MeasureState, SamplingLaw, SolverSettings, builtin_market

from conftest import make_config


# ---------------------------------------------------------------------------
# N-particle dynamics
# ---------------------------------------------------------------------------


def test_frozen_dynamics():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.0)
    cfg = make_config(n_stocks=2, x0=(1.0, 2.0), y0=(0.5, 0.5), n_investors=2,
                      c=(0.0, 0.0), v0=(1.0, 3.0))
    paths = simulate_n_particle(o, cfg, n_paths=4)
    assert np.array_equal(paths.X, np.broadcast_to([1.0, 2.0], paths.X.shape))
    assert np.array_equal(paths.V, np.broadcast_to([1.0, 3.0], paths.V.shape))


def test_deterministic_exponential():
    r = 0.07
    o = builtin_market("constant", beta=[r], sigma=0.0)
    cfg = make_config(steps=200)
    paths = simulate_n_particle(o, cfg, strategies=market_portfolio_rule(), n_paths=1)
    assert paths.V[0, -1, 0] == pytest.approx(math.exp(r), rel=1e-12)


def test_gbm_terminal_moment():
    # Closed-form lognormal oracle: E X(T) = x0 e^{beta T}.
    beta, sigma, T = 0.04, 0.3, 1.0
    o = builtin_market("constant", beta=[beta], sigma=sigma)
    cfg = make_config(steps=50, seed=5150)
    paths = simulate_n_particle(o, cfg, n_paths=100_000, record_strategies=False)
    xT = paths.X[:, -1, 0]
    target = math.exp(beta * T)
    se = xT.std(ddof=1) / math.sqrt(xT.size)
    assert abs(xT.mean() - target) <= 3 * se


def test_positivity_hundred_seeds():
    o = builtin_market("volatility_stabilized", zeta=0.5, n=1)
    cfg = make_config(steps=25, x0=(2.0,), y0=(0.5,), horizon=0.5)
    for seed in range(100):
        paths = simulate_n_particle(o, cfg, seed=seed, n_paths=8, record_strategies=False)
        assert paths.X.min() > 0.0 and paths.V.min() > 0.0


def test_endogenous_y_identity_exact():
    # Y_i(t_k) = (1/N) sum_l V_l(t_k) pi_i^l(t_k) at every node, exactly.
    o = builtin_market("constant", beta=[0.02, 0.05], sigma=0.25)
    cfg = make_config(n_stocks=2, n_investors=3, x0=(1.0, 2.0), y0=(0.4, 0.6),
                      c=(0.0,) * 3, v0=(1.0, 2.0, 0.5), steps=30)
    paths = simulate_n_particle(o, cfg, n_paths=5)
    recomputed = np.einsum("rkl,rkli->rki", paths.V, paths.strategies) / cfg.n_investors
    assert np.array_equal(paths.Y, recomputed)


def test_bit_determinism_and_chunk_invariance():
    o = builtin_market("constant", beta=[0.02], sigma=0.2)
    cfg = make_config(steps=20, seed=99)
    a = simulate_n_particle(o, cfg, n_paths=50)
    b = simulate_n_particle(o, cfg, n_paths=50)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.V, b.V)
    # Splitting the same path range across calls reproduces the exact paths.
    first = simulate_n_particle(o, cfg, n_paths=30)
    rest = simulate_n_particle(o, cfg, n_paths=20, path_offset=30)
    assert np.array_equal(np.concatenate([first.X, rest.X]), a.X)


def test_strict_simplex_admissibility():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.2)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5),
                      solver=SolverSettings(strict_simplex=True))
    bad = constant_weights_rule(np.array([0.8, 0.3]))
    with pytest.raises(AdmissibilityError):
        simulate_n_particle(o, cfg, strategies=bad, n_paths=2)


def test_nonfinite_coefficient_reports_step():
    def beta_fn(t, x, meas):
        return np.full(x.shape, np.nan)

    base = builtin_market("constant", beta=[0.0], sigma=0.2)
    from dataclasses import replace
    broken = replace(base, beta=beta_fn)
    cfg = make_config(steps=7)
    with pytest.raises(SimulationError) as err:
        simulate_n_particle(broken, cfg, n_paths=2)
    assert err.value.step == 0


# ---------------------------------------------------------------------------
# Deflator
# ---------------------------------------------------------------------------


def test_deflator_trivial():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.2)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5))
    paths = simulate_n_particle(o, cfg, n_paths=3)
    defl = simulate_deflator(paths, o, cfg)
    assert np.array_equal(defl.theta, np.zeros_like(defl.theta))
    assert np.array_equal(defl.L, np.ones_like(defl.L))


def test_deflator_martingale_constant_theta():
    o = builtin_market("constant", beta=[0.06], sigma=0.2)   # theta = 0.3
    cfg = make_config(steps=50, seed=62)
    paths = simulate_n_particle(o, cfg, n_paths=100_000, record_strategies=False)
    defl = simulate_deflator(paths, o, cfg)
    lT = defl.L[:, -1]
    se = lT.std(ddof=1) / math.sqrt(lT.size)
    assert abs(lT.mean() - 1.0) <= 3 * se


def test_deflator_reconstruction_identity():
    o = builtin_market("constant", beta=[0.05], sigma=0.25, gamma=[0.1], tau=0.3)
    cfg = make_config(steps=40, seed=8)
    paths = simulate_n_particle(o, cfg, n_paths=6, y_mode="exogenous")
    defl = simulate_deflator(paths, o, cfg)
    rebuilt = np.exp(np.cumsum(defl.log_increments, axis=1))
    assert np.max(np.abs(rebuilt - defl.L[:, 1:])) <= 1e-12


def test_deflated_wealth_flat_mean():
    # Per-path least-squares slope of deflated wealth against time has zero
    # mean under constant coefficients (supermartingale with equality).
    o = builtin_market("constant", beta=[0.08], sigma=0.25)
    cfg = make_config(steps=40, seed=4242)
    paths = simulate_n_particle(o, cfg, n_paths=20000, record_strategies=False)
    defl = simulate_deflator(paths, o, cfg)
    vhat = paths.V[:, :, 0] * defl.L
    t = cfg.grid
    tc = t - t.mean()
    slopes = (vhat @ tc) / (tc @ tc)
    se = slopes.std(ddof=1) / math.sqrt(slopes.size)
    assert abs(slopes.mean()) <= 3 * se


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def test_benchmark_delta_one():
    o = builtin_market("constant", beta=[0.02, 0.02], sigma=0.2)
    cfg = make_config(n_stocks=2, x0=(1.0, 2.0), y0=(0.5, 0.5), delta=1.0)
    paths = simulate_n_particle(o, cfg, n_paths=3)
    bench = benchmark_path(paths, cfg)
    assert np.array_equal(bench.Vbench, paths.X.sum(axis=2))


def test_benchmark_delta_zero_frozen_wealth():
    o = builtin_market("constant", beta=[0.0], sigma=0.0)
    cfg = make_config(delta=0.0, n_investors=2, c=(0.0, 0.0), v0=(2.0, 5.0))
    paths = simulate_n_particle(o, cfg, n_paths=2)
    bench = benchmark_path(paths, cfg)
    assert np.array_equal(bench.Vbench, np.ones_like(bench.Vbench))


def test_benchmark_arithmetic():
    cfg = make_config(n_stocks=2, n_investors=2, delta=0.5, steps=1,
                      x0=(1.0, 1.0), y0=(0.5, 0.5), c=(0.0, 0.0), v0=(1.0, 1.0))
    grid = cfg.grid
    X = np.ones((1, 2, 2))
    V = np.array([[[1.0, 1.0], [1.0, 3.0]]])   # V/v at the last node = (1, 3)
    Y = np.full((1, 2, 2), 0.5)
    dW = np.zeros((1, 1, 2))
    paths = ParticlePathSet(grid=grid, X=X, V=V, Y=Y, dW=dW, strategies=None,
                            endogenous_y=False, y_clamp_count=0, seed=0)
    bench = benchmark_path(paths, cfg)
    assert bench.Vbench[0, -1] == pytest.approx(0.5 * 2.0 + 0.5 * 2.0, abs=0)
    assert bench.rel_log_performance[0] == pytest.approx(
        np.log(np.array([1.0, 3.0]) / 2.0), abs=1e-15)


def test_benchmark_shape_mismatch():
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5))
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    wrong = simulate_n_particle(o, make_config(), n_paths=1)
    with pytest.raises(DomainError):
        benchmark_path(wrong, cfg)


# ---------------------------------------------------------------------------
# Mean-field dynamics
# ---------------------------------------------------------------------------


def test_mean_field_point_mass_inner_identical():
    o = builtin_market("constant", beta=[0.03], sigma=0.2)
    cfg = make_config(seed=12, v0=(1.7,), c=(0.2,))
    mf = simulate_mean_field(o, cfg, k_inner=8, n_outer=2)
    assert np.max(np.abs(mf.inner - mf.inner[:, :1, :])) == 0.0
    assert np.array_equal(mf.m, mf.inner[:, 0, :])


def test_mean_field_frozen_dynamics():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.0)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.4, 0.6), v0=(2.0,), c=(0.0,),
                      v0_law=SamplingLaw("point", 2.0))
    mf = simulate_mean_field(o, cfg, k_inner=8, n_outer=3)
    assert np.array_equal(mf.m, np.full_like(mf.m, 2.0))
    assert np.max(np.abs(mf.Z - mf.Z[:, :1, :])) == 0.0


def test_mean_field_inner_scaling():
    # With frozen dynamics m is the sample mean of v0 draws, so its variance
    # across replications scales like 1/K_inner (conditional MC error oracle).
    o = builtin_market("constant", beta=[0.0], sigma=0.0)
    cfg = make_config(v0_law=SamplingLaw("uniform", 0.5, 1.5), seed=2024)
    reps = 200
    out = {}
    for k in (16, 256):
        mf = simulate_mean_field(o, cfg, k_inner=k, n_outer=reps)
        out[k] = mf.m[:, -1].var(ddof=1)
    ratio = out[16] / out[256]
    assert 8 <= ratio <= 32


def test_mean_field_common_noise_shared():
    # Same seed: the common-noise increments equal the N-particle market noise.
    o = builtin_market("constant", beta=[0.01], sigma=0.2)
    cfg = make_config(seed=555)
    mf = simulate_mean_field(o, cfg, k_inner=2, n_outer=3)
    paths = simulate_n_particle(o, cfg, n_paths=3)
    assert np.array_equal(mf.B, paths.dW)
    assert np.allclose(mf.X, paths.X, rtol=0, atol=0)


def test_mean_field_k_inner_guard():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    with pytest.raises(ConfigError):
        simulate_mean_field(o, make_config(), k_inner=1)


def test_exogenous_y_clamp_counted():
    o = builtin_market("constant", beta=[0.0], sigma=0.2, gamma=[-5.0], tau=0.0)
    cfg = make_config(steps=30, y0=(0.05,))
    paths = simulate_n_particle(o, cfg, n_paths=4, y_mode="exogenous")
    assert paths.y_clamp_count > 0
    assert paths.Y.min() >= 0.0
