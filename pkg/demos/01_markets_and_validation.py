"""Markets, scenarios and feasibility checks.

Builds the two built-in markets, inspects their coefficient structure, and
walks through the validation report: the hard preference-sum condition and
the advisory no-arbitrage / diversity diagnostics.
"""
import numpy as np

from relarb.model import (MeasureState, ScenarioConfig, SolverSettings, builtin_market,
                          market_weights, preference_condition_lhs, validate_scenario)

# A constant-coefficient market: two stocks, diagonal volatility 0.2 and a
# market price of risk theta = beta / sigma = 0.1 per stock.
gbm = builtin_market("constant", beta=[0.02, 0.02], sigma=0.2)

# The volatility-stabilized market: per-stock variance scales with the price
# level, so small stocks are the volatile ones.  Drift and invested-capital
# coefficients read the mean invested capital (the measure summary).
vsm = builtin_market("volatility_stabilized", zeta=0.5, n=2)

x = np.array([4.0, 1.0])
meas = MeasureState(y=np.array([0.5, 0.5]), m=1.0)
print("market weights of x =", x, "->", market_weights(x).w)
print("VSM relative drift:", vsm.beta(0.0, x, meas))
print("VSM absolute covariance diag (= x):", np.diagonal(vsm.a_matrix(0.0, x, meas)))
print("VSM prices of risk: theta =", vsm.theta(0.0, x, meas), " lambda =", vsm.lam(0.0, x, meas.y))

config = ScenarioConfig(
    n_stocks=2, n_investors=2, horizon=1.0, steps=100, delta=0.5,
    c=(0.01, 0.01), v0=(1.0, 1.0), x0=(1.0, 1.0), y0=(0.5, 0.5), seed=42,
    solver=SolverSettings(n_paths=20000),
)
print("\npreference-sum lhs (must be < 1):", preference_condition_lhs(config))
report = validate_scenario(config, gbm)
print("feasible:", report.feasible)
for check in report.checks:
    print(f"  [{'hard' if check.hard else 'advisory'}] {check.name}: {check.passed}")
    print("     ", check.message)

# Push the preferences past the feasibility boundary: with one investor,
# delta = 0.5 and v = 1, any c >= log 2 makes the target unreachable.
bad = ScenarioConfig(
    n_stocks=2, n_investors=1, horizon=1.0, steps=50, delta=0.5,
    c=(np.log(3.0),), v0=(1.0,), x0=(1.0, 1.0), y0=(0.5, 0.5), seed=42,
)
print("\ninfeasible example feasible? ->", validate_scenario(bad).feasible)
