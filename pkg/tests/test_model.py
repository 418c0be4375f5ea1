import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relarb.errors import ConfigError, DomainError, SingularMarketError
from relarb.model import (MeasureState, ScenarioConfig, SamplingLaw, SolverSettings,
                          builtin_market, market_weights, oracle_selfcheck,
                          preference_condition_lhs, scenario_from_dict, validate_scenario)

from conftest import make_config


# ---------------------------------------------------------------------------
# Scenario validation
# ---------------------------------------------------------------------------


def test_delta_one_always_feasible():
    cfg = make_config(delta=1.0, n_investors=3, c=(5.0, -2.0, 0.3), v0=(0.1, 1.0, 2.0))
    assert validate_scenario(cfg).feasible


def test_two_investor_feasible_case():
    # Sum the outperformance targets over investors: the peer average m must
    # satisfy N m >= sum_l (e^{c_l}/v_l) (delta X + (1-delta) m), which is
    # solvable for positive m exactly when (1-delta) (1/N) sum e^c/v < 1.
    cfg = make_config(n_investors=2, delta=0.5, c=(0.0, 0.0), v0=(1.0, 1.0))
    lhs_manual = (1 - 0.5) * (1 / 2) * sum(math.exp(c) / v for c, v in zip((0.0, 0.0), (1.0, 1.0)))
    assert lhs_manual == 0.5
    assert preference_condition_lhs(cfg) == pytest.approx(lhs_manual, abs=0)
    assert validate_scenario(cfg).feasible


def test_single_investor_infeasible_case():
    cfg = make_config(n_investors=1, delta=0.5, c=(math.log(3.0),), v0=(1.0,))
    assert preference_condition_lhs(cfg) == pytest.approx(1.5)
    assert not validate_scenario(cfg).feasible


def test_literal_flag_drops_normalization():
    # With N = 2 the printed form doubles the normalized one.
    cfg = make_config(n_investors=2, delta=0.5, c=(0.3, 0.3), v0=(1.0, 1.0))
    normalized = preference_condition_lhs(cfg)
    literal = preference_condition_lhs(cfg, literal=True)
    assert literal == pytest.approx(2 * normalized)
    cfg_lit = make_config(n_investors=2, delta=0.5, c=(0.3, 0.3), v0=(1.0, 1.0),
                          solver=SolverSettings(ccond_literal=True))
    assert validate_scenario(cfg).feasible
    assert not validate_scenario(cfg_lit).feasible


def test_validation_is_pure(gbm2):
    cfg = make_config(n_investors=2, c=(0.1, 0.2), v0=(1.0, 2.0), n_stocks=2,
                      x0=(1.0, 2.0), y0=(0.5, 0.5))
    assert validate_scenario(cfg, gbm2) == validate_scenario(cfg, gbm2)


def test_structural_errors_rejected_before_checks():
    with pytest.raises(ConfigError):
        make_config(x0=(-1.0,))
    with pytest.raises(ConfigError):
        make_config(delta=1.5)
    with pytest.raises(ConfigError):
        make_config(v0=(0.0,))
    with pytest.raises(ConfigError):
        make_config(seed=-1)


def test_memory_budget_guard():
    with pytest.raises(ConfigError):
        make_config(steps=10**6, n_stocks=100, n_investors=100,
                    x0=tuple([1.0] * 100), y0=tuple([1.0] * 100),
                    c=tuple([0.0] * 100), v0=tuple([1.0] * 100))


# ---------------------------------------------------------------------------
# Market weights
# ---------------------------------------------------------------------------


def test_market_weights_symmetry():
    assert np.allclose(market_weights([1.0, 1.0, 1.0, 1.0]).w, 0.25, atol=0, rtol=0)


def test_market_weights_arithmetic():
    assert market_weights([3.0, 1.0]).w == pytest.approx([0.75, 0.25], abs=0)


def test_market_weights_boundary_rejection():
    with pytest.raises(DomainError):
        market_weights([2.0, 0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1, max_size=6),
       st.floats(min_value=1e-6, max_value=1e6))
def test_market_weights_scale_invariant(x, lam):
    w1 = market_weights(np.asarray(x)).w
    w2 = market_weights(lam * np.asarray(x)).w
    assert np.allclose(w1, w2, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# Built-in oracles
# ---------------------------------------------------------------------------


def test_constant_oracle_zero_drift_price_of_risk():
    o = builtin_market("constant", beta=[0.0, 0.0], sigma=0.2)
    meas = MeasureState(y=np.array([0.5, 0.5]), m=1.0)
    theta = o.theta_of(0.0, np.array([1.0, 2.0]), meas)
    assert np.array_equal(theta, np.zeros(2))


def test_constant_oracle_state_independent():
    o = builtin_market("constant", beta=[0.03, 0.01], sigma=[[0.2, 0.0], [0.05, 0.25]])
    rng = np.random.default_rng(0)
    xs = rng.uniform(0.1, 10.0, size=(100, 2))
    meas = MeasureState(y=rng.uniform(0.1, 2.0, size=(100, 2)), m=rng.uniform(0.5, 2.0, size=100))
    b = o.beta(0.3, xs, meas)
    s = o.sigma(0.7, xs, meas)
    assert np.array_equal(b, np.broadcast_to([0.03, 0.01], (100, 2)))
    assert np.array_equal(s[0], s[99])


def test_vsm_drift_substitution():
    o = builtin_market("volatility_stabilized", zeta=0.0, n=2)
    meas = MeasureState(y=np.array([0.5, 0.5]), m=1.0)
    beta = o.beta(0.0, np.array([1.0, 1.0]), meas)
    assert beta == pytest.approx([0.5, 0.5], rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.0, max_value=3.0),
       st.lists(st.floats(min_value=0.05, max_value=20.0), min_size=2, max_size=2),
       st.lists(st.floats(min_value=0.05, max_value=5.0), min_size=2, max_size=2))
def test_vsm_drift_identity_interior(zeta, x, y):
    # beta_i * 2 m_i / z_i = (1 + zeta) exactly on the interior.
    o = builtin_market("volatility_stabilized", zeta=zeta, n=2)
    x = np.asarray(x); y = np.asarray(y)
    beta = o.beta(0.0, x, MeasureState(y=y, m=1.0))
    mw = x / x.sum()
    assert np.allclose(beta * 2 * mw / y, 1.0 + zeta, rtol=1e-12)


def test_vsm_degenerate_face_flagged():
    o = builtin_market("volatility_stabilized", zeta=0.0, n=2)
    pts = np.array([[1.0, 1e-14]])
    with pytest.raises(SingularMarketError):
        oracle_selfcheck(o, pts, y_points=np.array([[0.5, 0.5]]))
    with pytest.raises(SingularMarketError):
        o.beta(0.0, np.array([1.0, 0.0]), MeasureState(y=np.array([0.5, 0.5]), m=1.0))


def test_constant_oracle_potential_identities():
    # H linear in log prices reproduces the drift: residual <= 1e-8 over 1000 points.
    o = builtin_market("constant", beta=[0.03, 0.01], sigma=[[0.2, 0.0], [0.05, 0.25]],
                       gamma=[0.02, 0.04], tau=[[0.3, 0.0], [0.0, 0.4]])
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.1, 10.0, size=(1000, 2))
    ys = rng.uniform(0.1, 5.0, size=(1000, 2))
    out = oracle_selfcheck(o, pts, y_points=ys)
    assert out["potential_residual_x"] <= 1e-8
    assert out["potential_residual_y"] <= 1e-8


def test_builtin_market_unknown_kind():
    with pytest.raises(DomainError):
        builtin_market("cev")


# ---------------------------------------------------------------------------
# Scenario schema
# ---------------------------------------------------------------------------


def _doc(**kw):
    doc = {
        "schema_version": 1, "n": 1, "N": 2, "T": 1.0, "steps": 10, "delta": 0.5,
        "c": [0.0, 0.0], "v0": [1.0, 1.0], "x0": [1.0], "y0": [0.5], "seed": 3,
        "market": {"kind": "constant", "beta": [0.0], "sigma": 0.2},
    }
    doc.update(kw)
    return doc


def test_schema_version_mandatory():
    doc = _doc()
    del doc["schema_version"]
    with pytest.raises(ConfigError):
        scenario_from_dict(doc)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        scenario_from_dict(_doc(bogus=1))
    with pytest.raises(ConfigError):
        scenario_from_dict(_doc(market={"kind": "constant", "beta": [0.0], "sigma": 0.2, "frobnicate": 1}))
    with pytest.raises(ConfigError):
        scenario_from_dict(_doc(solver={"n_paths": 10, "nonsense": True}))


def test_preference_law_sampling_deterministic():
    doc = _doc(c={"law": "uniform", "a": -0.1, "b": 0.1})
    cfg1, _ = scenario_from_dict(doc)
    cfg2, _ = scenario_from_dict(doc)
    assert cfg1.c == cfg2.c
    assert len(cfg1.c) == 2
    assert all(-0.1 <= c <= 0.1 for c in cfg1.c)


def test_point_mass_law():
    law = SamplingLaw("point", 0.25)
    rng = np.random.default_rng(0)
    assert np.array_equal(law.sample(rng, 5), np.full(5, 0.25))


def test_scenario_roundtrip_config_fields():
    cfg, oracle = scenario_from_dict(_doc())
    assert cfg.n_stocks == 1 and cfg.n_investors == 2
    assert oracle.name == "constant"
    d = cfg.to_dict()
    assert d["schema_version"] == 1
    assert d["seed"] == 3
