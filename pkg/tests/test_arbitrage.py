import math
from dataclasses import replace

import numpy as np
import pytest

from relarb.arbitrage import (CauchyGridSpec, apply_generator, estimate_u_mc,
                              fd_generator_residual, fichera_check, grad_log_u,
                              solve_cauchy_fd, u_profile_mc)
from relarb.errors import DomainError
from relarb.model import MeasureState, builtin_market

from conftest import make_config


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------


def test_u_delta_one_baseline():
    # delta = 1, zero drift: the deflated total capitalization is a martingale
    # and L = 1, so u = 1.
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.2)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5), delta=1.0, steps=50, seed=41)
    est = estimate_u_mc(o, cfg, investor=0, n_paths=20000)
    assert abs(est.u_hat - 1.0) <= 3 * est.std_err


def test_u_constant_market_equals_exp_c():
    # Deflated stocks and wealths are exact martingales for the lognormal
    # oracle, so u = e^c for any constant market with gamma = 0.
    o = builtin_market("constant", beta=[0.02, 0.02], sigma=0.2)
    cfg = make_config(n_stocks=2, n_investors=2, x0=(1.0, 1.0), y0=(0.5, 0.5),
                      c=(0.01, 0.01), v0=(1.0, 1.0), delta=0.5, steps=100, seed=77)
    est = estimate_u_mc(o, cfg, investor=0, n_paths=20000)
    assert abs(est.u_hat - math.exp(0.01)) <= 3 * est.std_err


def test_u_preference_ratio_exact():
    # c enters as a multiplicative constant: same seed, ratio is exact.
    o = builtin_market("constant", beta=[0.02], sigma=0.2)
    cfg = make_config(steps=50, seed=13)
    a = estimate_u_mc(o, cfg, investor=-0.5, n_paths=2000)
    b = estimate_u_mc(o, cfg, investor=0.0, n_paths=2000)
    assert a.u_hat / b.u_hat == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_u_normalized_convention():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    cfg = make_config(seed=4)
    est = estimate_u_mc(o, cfg, investor=0.7, n_paths=500, normalized=True)
    assert est.u_tilde == pytest.approx(est.u_hat * math.exp(0.7), rel=1e-14)
    assert est.u_normalized == est.u_hat


def test_low_path_warning_flag():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    est = estimate_u_mc(o, make_config(), n_paths=50)
    assert est.low_paths


def test_minimality_surrogate_no_arbitrage():
    # u never exceeds the trivial solution beyond noise in a no-arbitrage baseline.
    o = builtin_market("constant", beta=[0.03, 0.03], sigma=0.25)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5), c=(0.2,), steps=50, seed=6)
    est = estimate_u_mc(o, cfg, investor=0, n_paths=20000)
    assert est.u_hat <= math.exp(0.2) * (1.0 + 5.0 * est.std_err / est.u_hat)


def test_minimality_strict_in_vsm(vsm2, vsm2_config):
    est = estimate_u_mc(vsm2, vsm2_config, investor=0, n_paths=20000)
    assert est.u_hat < math.exp(vsm2_config.c[0]) - 3 * est.std_err


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def _pt(x, y):
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def test_generator_annihilates_constants():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    val = apply_generator(o, _pt([1.0], [1.0]), lambda x, y: math.exp(0.3),
                          delta=0.5, vbench0=1.0)
    assert val == 0.0


def test_generator_first_derivative_term():
    # f(x) = x_1, constant a with a_11 = 0.04, delta = 0.5, Vbench(0) = 1:
    # A f = delta * a_11 = 0.02 (hand evaluation).
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    val = apply_generator(o, _pt([1.0], [1.0]), lambda x, y: float(x[0]),
                          delta=0.5, vbench0=1.0)
    assert val == pytest.approx(0.02, abs=1e-9)


def test_generator_second_derivative_term():
    # f(x) = x_1^2, a_11 = 0.04, delta = 0: A f = a_11 (second difference only).
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    val = apply_generator(o, _pt([1.0], [1.0]), lambda x, y: float(x[0] ** 2),
                          delta=0.0, vbench0=1.0)
    assert val == pytest.approx(0.04, abs=1e-7)
    # Same value from supplied analytic derivatives.
    val2 = apply_generator(o, _pt([1.0], [1.0]), None, delta=0.0, vbench0=1.0,
                           derivatives={"grad_x": [2.0], "hess_x": [[2.0]], "hess_y": [[0.0]]})
    assert val2 == pytest.approx(0.04, abs=1e-14)


def test_generator_linearity():
    # Linearity asserted through analytic derivative blocks; stencil rounding
    # is amplified by 1/h^2 and cannot meet a 1e-10 bound.
    o = builtin_market("constant", beta=[0.01, 0.0], sigma=[[0.2, 0.0], [0.1, 0.3]],
                       gamma=[0.1, 0.1], tau=0.35)
    rng = np.random.default_rng(11)

    def d_f(x, y):
        return {"grad_x": np.cos(x), "hess_x": np.diag(-np.sin(x)), "hess_y": 2 * np.eye(2)}

    def d_g(x, y):
        return {"grad_x": 0.1 * np.exp(0.1 * x) + y, "hess_x": np.diag(0.01 * np.exp(0.1 * x)),
                "hess_y": np.zeros((2, 2))}

    def combine(da, db, a, b):
        return {k: a * np.asarray(da[k]) + b * np.asarray(db[k]) for k in da}

    for _ in range(5):
        pt = _pt(rng.uniform(0.5, 2.0, 2), rng.uniform(0.5, 2.0, 2))
        a, b = rng.uniform(-2, 2, 2)
        da, db = d_f(*pt), d_g(*pt)
        lhs = apply_generator(o, pt, None, 0.3, 1.5, derivatives=combine(da, db, a, b))
        rhs = a * apply_generator(o, pt, None, 0.3, 1.5, derivatives=da) \
            + b * apply_generator(o, pt, None, 0.3, 1.5, derivatives=db)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_generator_stencil_domain_error():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    with pytest.raises(DomainError):
        apply_generator(o, _pt([1e-6], [1.0]), lambda x, y: 1.0, 0.5, 1.0, h=1e-4)


# ---------------------------------------------------------------------------
# Finite-difference solver
# ---------------------------------------------------------------------------


def test_fd_trivial_solution_residual():
    o = builtin_market("constant", beta=[0.05], sigma=0.2)
    cfg = make_config(steps=20, c=(0.01,))
    res = fd_generator_residual(o, cfg, math.exp(0.01))
    assert res < 1e-12


def test_fd_cross_method_constant_market():
    o = builtin_market("constant", beta=[0.05], sigma=0.2)
    cfg = make_config(steps=50, c=(0.01,), seed=1001)
    grid = solve_cauchy_fd(o, cfg)
    est = estimate_u_mc(o, cfg, investor=0, n_paths=20000)
    fd_val = grid.value_at(cfg.x0[0], cfg.y0[0])
    assert abs(fd_val - est.u_hat) <= max(3 * est.std_err, 1e-2)
    assert grid.cfl_ratio <= 0.9 + 1e-12
    assert grid.min_value >= 0.0
    assert not grid.boundary_warning


def test_fd_initial_slice_exact():
    o = builtin_market("constant", beta=[0.0], sigma=0.2)
    cfg = make_config(steps=10, c=(0.3,))
    grid = solve_cauchy_fd(o, cfg, CauchyGridSpec(nx=33, ny=33, sentinel_check=False))
    assert np.array_equal(grid.values[0], np.full((33, 33), math.exp(0.3)))


def test_fd_refinement_trend():
    o = builtin_market("constant", beta=[0.05], sigma=0.2)
    cfg = make_config(steps=20, c=(0.0,))
    vals = {}
    for nx in (33, 65, 129):
        g = solve_cauchy_fd(o, cfg, CauchyGridSpec(nx=nx, ny=nx, sentinel_check=False))
        vals[nx] = g.value_at(cfg.x0[0], cfg.y0[0])
    coarse_change = abs(vals[65] - vals[33])
    fine_change = abs(vals[129] - vals[65])
    assert fine_change <= coarse_change + 1e-15


def test_fd_requires_one_stock():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.2)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5))
    with pytest.raises(DomainError):
        solve_cauchy_fd(o, cfg)


def test_fd_monotone_max_diagnostic():
    o = builtin_market("constant", beta=[0.05], sigma=0.2)
    cfg = make_config(steps=20, c=(0.1,))
    g = solve_cauchy_fd(o, cfg, CauchyGridSpec(nx=65, ny=65, sentinel_check=False))
    assert np.all(np.diff(g.max_over_tau) <= 1e-10)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def test_gradients_vanish_constant_market(gbm2, gbm2_config):
    gb = grad_log_u(gbm2, gbm2_config, m0=1.0, n_paths=8000)
    assert np.all(np.abs(gb.dlogu_x) <= 3 * gb.se_x)
    assert np.all(np.abs(gb.dlogu_y) <= 3 * gb.se_y)
    assert abs(gb.dlogu_m) <= 3 * gb.se_m


def test_gradients_invariant_to_preference(gbm2, gbm2_config):
    # c enters log u additively, the u-hat profile excludes it: bitwise equal.
    gb0 = grad_log_u(gbm2, gbm2_config, m0=1.0, n_paths=1000)
    cfg_c = replace(gbm2_config, c=(0.3, 0.3))
    gb1 = grad_log_u(gbm2, cfg_c, m0=1.0, n_paths=1000)
    assert np.max(np.abs(gb0.dlogu_x - gb1.dlogu_x)) <= 1e-10
    assert abs(gb0.dlogu_m - gb1.dlogu_m) <= 1e-10


def test_gradient_one_sided_flag():
    o = builtin_market("constant", beta=[0.02], sigma=0.2)
    cfg = make_config(y0=(1e-6,), seed=3)
    gb = grad_log_u(o, cfg, m0=1.0, n_paths=500, h_abs=1e-4)
    assert "y0" in gb.one_sided


def test_gradient_m_nonzero_with_capital_dynamics(gbm_y1, gbm_y1_config):
    # Analytic oracle: with frozen constant m, u(m) = (d q1 + (1-d) m q2) / (d x0 + (1-d) m)
    # where q1 = E[X_T L_T], q2 = E[L_T]; both estimated from the same streams.
    cfg = gbm_y1_config
    gb = grad_log_u(gbm_y1, cfg, m0=1.0, n_paths=20000)
    prof1 = u_profile_mc(gbm_y1, cfg, 20000, frozen_m=1.0, y_mode="exogenous")

    from relarb.engine import benchmark_path, simulate_deflator, simulate_n_particle
    paths = simulate_n_particle(gbm_y1, cfg, seed=cfg.seed, n_paths=20000,
                                record_strategies=False, y_mode="exogenous")
    defl = simulate_deflator(paths, gbm_y1, cfg)
    q1 = float((paths.X[:, -1, 0] * defl.L[:, -1]).mean())
    q2 = float(defl.L[:, -1].mean())
    d, x0 = cfg.delta, cfg.x0[0]

    def u_of_m(m):
        return (d * q1 + (1 - d) * m * q2) / (d * x0 + (1 - d) * m)

    h = max(cfg.solver.bump_abs, cfg.solver.bump_rel * 1.0)   # the solver's own bump
    oracle_dm = (math.log(u_of_m(1 + h)) - math.log(u_of_m(1 - h))) / (2 * h)
    assert gb.dlogu_m == pytest.approx(oracle_dm, rel=1e-9)
    assert abs(gb.dlogu_m) > 1e-3


# ---------------------------------------------------------------------------
# Fichera drift
# ---------------------------------------------------------------------------


def test_fichera_gbm_no_arbitrage(gbm2, gbm2_config):
    report = fichera_check(gbm2, gbm2_config)
    assert report.verdict == "no_relative_arbitrage"
    for face in report.faces:
        assert face.verdict == "nonnegative_on_face"
        assert abs(face.f_min) <= 1e-8 and abs(face.f_max) <= 1e-8


def test_fichera_vsm_arbitrage(vsm2, vsm2_config):
    report = fichera_check(vsm2, vsm2_config)
    assert report.verdict == "relative_arbitrage_exists"
    for face in report.faces:
        assert face.f_min == pytest.approx(-0.5, abs=1e-8)
        assert face.f_max == pytest.approx(-0.5, abs=1e-8)


def test_fichera_numeric_divergence_fallback(vsm2, vsm2_config):
    # Strip the analytic divergences: the one-sided numeric route must agree.
    stripped = replace(vsm2, a_div=None, psi_div=None)
    report = fichera_check(stripped, vsm2_config)
    assert report.verdict == "relative_arbitrage_exists"
    for face in report.faces:
        assert face.f_min == pytest.approx(-0.5, abs=1e-3)


def test_fichera_mixed_market():
    # a_11 = x_1 (square-root type), a_22 = sigma^2 x_2^2 (lognormal type):
    # face x_1 = 0 is negative, face x_2 = 0 has f = 0 -> inconclusive.
    def beta_fn(t, x, meas):
        return np.zeros_like(np.asarray(x, dtype=float))

    def sigma_fn(t, x, meas):
        x = np.asarray(x, dtype=float)
        d = np.zeros(x.shape + (2,))
        d[..., 0, 0] = 1.0 / np.sqrt(np.maximum(x[..., 0], 1e-12))
        d[..., 1, 1] = 0.2
        return d

    def gamma_fn(t, x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    def tau_fn(t, x, y):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (2,))

    from relarb.model import MarketCoefficientOracle
    mixed = MarketCoefficientOracle(name="mixed", beta=beta_fn, sigma=sigma_fn,
                                    gamma=gamma_fn, tau=tau_fn, has_y_dynamics=False)
    cfg = make_config(n_stocks=2, x0=(1.0, 1.0), y0=(0.5, 0.5))
    report = fichera_check(mixed, cfg)
    assert report.verdict == "inconclusive"
    by_face = {f.face: f.verdict for f in report.faces}
    assert by_face["x0"] == "negative_on_face"
    assert by_face["x1"] == "nonnegative_on_face"
