import numpy as np
import pytest

from relarb.model import MarketCoefficientOracle, MeasureState, ScenarioConfig, SolverSettings, builtin_market


@pytest.fixture
def gbm2():
    """Constant-coefficient two-stock market: sigma diagonal 0.2, theta = (0.1, 0.1)."""
    return builtin_market("constant", beta=[0.02, 0.02], sigma=0.2)


@pytest.fixture
def gbm2_config():
    return ScenarioConfig(n_stocks=2, n_investors=2, horizon=1.0, steps=100, delta=0.5,
                          c=(0.01, 0.01), v0=(1.0, 1.0), x0=(1.0, 1.0), y0=(0.5, 0.5),
                          seed=20240, solver=SolverSettings(n_paths=4000))


@pytest.fixture
def vsm2():
    return builtin_market("volatility_stabilized", zeta=0.5, n=2)


@pytest.fixture
def vsm2_config():
    return ScenarioConfig(n_stocks=2, n_investors=2, horizon=0.5, steps=100, delta=0.5,
                          c=(0.0, 0.0), v0=(1.0, 1.0), x0=(4.0, 4.0), y0=(0.25, 0.25),
                          seed=777, solver=SolverSettings(n_paths=4000))


@pytest.fixture
def gbm_y1():
    """One-stock constant market with invested-capital dynamics (lambda != 0)."""
    return builtin_market("constant", beta=[0.05], sigma=0.2, gamma=[0.1], tau=0.3)


@pytest.fixture
def gbm_y1_config():
    return ScenarioConfig(n_stocks=1, n_investors=2, horizon=1.0, steps=100, delta=0.5,
                          c=(0.0, 0.0), v0=(1.0, 1.0), x0=(1.0,), y0=(0.5,),
                          seed=31337, solver=SolverSettings(n_paths=4000))


def make_config(**kw) -> ScenarioConfig:
    base = dict(n_stocks=1, n_investors=1, horizon=1.0, steps=50, delta=0.5,
                c=(0.0,), v0=(1.0,), x0=(1.0,), y0=(0.5,), seed=1)
    base.update(kw)
    return ScenarioConfig(**base)
