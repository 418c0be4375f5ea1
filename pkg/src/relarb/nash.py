"""N-player Nash equilibrium via a damped fixed point on the mean wealth path.

The map acts on the peer-average path m: given m, the per-investor optimal
proportions are re-estimated by Monte Carlo with the benchmark's peer leg
frozen at m, and the map returns the peer average implied by every investor
holding their optimal wealth.  Inside the contraction region K the map has
|Phi'| < 1 and the fixed point is unique; the region bound, the exit-time
statistics of total capitalization, and the Gaussian uniqueness probability
are all reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .arbitrage import GradientBlock, UProfile, grad_log_u, u_profile_mc
from .engine import (StrategyRule, benchmark_path, market_portfolio_rule,
                     profile_rule, simulate_n_particle)
from .errors import DomainError, InfeasibleScenarioError, SingularMarketError
from .model import MarketCoefficientOracle, MeasureState, ScenarioConfig
from .rng import chunk_ranges


# ---------------------------------------------------------------------------
# The fixed-point map
# ---------------------------------------------------------------------------


def phi_map(m: float, x_total: float, u_normalized, config: ScenarioConfig) -> float:
    """One application of the wealth-mean map.

    u_normalized holds each investor's u-hat with the e^c factor removed,
    evaluated at the current mean m (m itself only enters through them; it is
    accepted here to make the fixed-point signature explicit).
    """
    u_hat = np.broadcast_to(np.asarray(u_normalized, dtype=np.float64), (config.n_investors,))
    s = float(np.sum(np.exp(config.c_array()) * u_hat / config.v0_array()))
    denom = config.n_investors - (1.0 - config.delta) * s
    if denom <= 0.0:
        raise InfeasibleScenarioError(
            "preference condition violated: N - (1-delta) sum e^c u-hat / v0 = "
            f"{denom:.6g} <= 0")
    return config.delta * float(x_total) * s / denom


def u_hat_along_path(prof: UProfile) -> np.ndarray:
    """Path-refreshed u-hat(T - t_k): ratio of deflated-benchmark means.

    u-hat(T - t) = E[Vbench(T) L(T)] / E[Vbench(t) L(t)]; exactly 1 at t = T,
    which anchors the fixed point at the terminal node.
    """
    return prof.p[-1] / prof.p


def phi_profile(prof: UProfile, config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodewise (Phi, S, A) along the grid from a u-hat horizon profile.

    The u-hat entering node t_k is the path-refreshed value at horizon T - t_k.
    """
    u_rev = u_hat_along_path(prof)
    weights = float(np.sum(np.exp(config.c_array()) / config.v0_array()))
    S = u_rev * weights
    A = config.n_investors - (1.0 - config.delta) * S
    if np.any(A <= 0.0):
        raise InfeasibleScenarioError(
            "preference condition violated along the horizon: min A = "
            f"{A.min():.6g} <= 0")
    Phi = config.delta * prof.x_total * S / A
    return Phi, S, A


# ---------------------------------------------------------------------------
# Contraction region and uniqueness probability
# ---------------------------------------------------------------------------


def contraction_region(u_normalized, dm_u_normalized, config: ScenarioConfig):
    """(A_t, D_t, K_upper) from u-hat values and their m-derivatives.

    Inputs are per-investor arrays (or common scalars); nodewise inputs may be
    stacked on a leading axis.  D_t = 0 maps to K_upper = +inf.
    """
    c = np.exp(config.c_array())
    v = config.v0_array()
    u_hat = np.asarray(u_normalized, dtype=np.float64)
    dm = np.asarray(dm_u_normalized, dtype=np.float64)
    if u_hat.ndim == 0:
        u_hat = np.broadcast_to(u_hat, (config.n_investors,))
    if dm.ndim == 0:
        dm = np.broadcast_to(dm, (config.n_investors,))
    S = np.sum(c * u_hat / v, axis=-1)
    A = config.n_investors - (1.0 - config.delta) * S
    D = config.n_investors * config.delta * np.abs(np.sum(c * dm / v, axis=-1))
    with np.errstate(divide="ignore"):
        K_upper = np.where(D > 0.0, A * A / np.where(D > 0.0, D, 1.0), np.inf)
    if np.ndim(K_upper) == 0:
        return float(A), float(D), float(K_upper)
    return A, D, K_upper


@dataclass(frozen=True)
class UniquenessResult:
    """Gaussian-CDF uniqueness probability and its Monte Carlo cross-checks."""

    probability: float            # headline value per the cdf_std_normalized flag
    probability_printed: float    # CDF argument with the variance term as printed
    probability_std: float        # CDF argument with the standard-deviation normalization
    empirical_in_region: float    # fraction of paths with X_total(t_eval) <= bound
    empirical_se: float
    exit_fraction: float          # fraction of paths leaving [0, bound) by t_eval
    mean_exit_time: float
    t_eval: float
    bound: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "probability", "probability_printed", "probability_std",
            "empirical_in_region", "empirical_se", "exit_fraction",
            "mean_exit_time", "t_eval", "bound")}


def uniqueness_probability(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                           k_upper: float, t_eval: float | None = None,
                           n_paths: int | None = None, seed: int | None = None,
                           strategies: StrategyRule | None = None,
                           mw_stats: tuple[float, float] | None = None,
                           k_upper_path: np.ndarray | None = None) -> UniquenessResult:
    """Probability that total capitalization sits inside the contraction region.

    The analytic value treats log X_total as Gaussian with market-portfolio
    statistics (m'beta, m'alpha m); the printed formula divides the CDF
    argument by the variance (not its square root), the std-normalized
    variant is the flagged alternative, and the empirical frequency from
    simulated paths arbitrates.  k_upper = +inf returns probability 1 exactly.
    """
    if t_eval is None:
        t_eval = config.horizon
    if n_paths is None:
        n_paths = config.solver.n_paths
    if seed is None:
        seed = config.seed
    if strategies is None:
        strategies = market_portfolio_rule()

    x_init = float(np.sum(config.x0_array()))
    if mw_stats is None:
        x0 = config.x0_array()
        mw = x0 / x0.sum()
        meas = MeasureState(y=config.y0_array(), m=1.0)
        beta0 = oracle.beta(0.0, x0, meas)
        alpha0 = oracle.alpha(0.0, x0, meas)
        mb = float(mw @ beta0)
        maa = float(mw @ alpha0 @ mw)
    else:
        mb, maa = mw_stats

    if not np.isfinite(k_upper):
        p_printed = p_std = 1.0
    else:
        num = math.log(k_upper / x_init) - (mb - 0.5 * maa) * t_eval
        p_printed = float(norm.cdf(num / (maa * t_eval)))
        p_std = float(norm.cdf(num / math.sqrt(maa * t_eval)))

    # Empirical cross-check from a dedicated chunked pass over paths.
    grid = config.grid
    k_eval = int(np.argmin(np.abs(grid - t_eval)))
    bounds = np.full(config.steps + 1, k_upper) if k_upper_path is None \
        else np.asarray(k_upper_path, dtype=np.float64)
    in_count = 0
    exit_count = 0
    exit_time_sum = 0.0
    total = 0
    for start, count in chunk_ranges(n_paths):
        paths = simulate_n_particle(oracle, config, strategies, seed, n_paths=count,
                                    record_strategies=False, path_offset=start)
        x_tot = paths.X.sum(axis=2)                      # (count, K+1)
        in_count += int(np.count_nonzero(x_tot[:, k_eval] <= bounds[k_eval]))
        outside = x_tot[:, :k_eval + 1] > bounds[None, :k_eval + 1]
        ever = outside.any(axis=1)
        exit_count += int(np.count_nonzero(ever))
        if np.any(ever):
            first = np.argmax(outside[ever], axis=1)
            exit_time_sum += float(grid[first].sum())
        total += count

    p_emp = in_count / total
    se = math.sqrt(max(p_emp * (1.0 - p_emp), 1e-12) / total)
    exit_frac = exit_count / total
    mean_exit = exit_time_sum / exit_count if exit_count else float("nan")
    headline = p_std if config.solver.cdf_std_normalized else p_printed
    return UniquenessResult(probability=headline, probability_printed=p_printed,
                            probability_std=p_std, empirical_in_region=p_emp,
                            empirical_se=se, exit_fraction=exit_frac,
                            mean_exit_time=mean_exit, t_eval=float(grid[k_eval]),
                            bound=float(bounds[k_eval]))


# ---------------------------------------------------------------------------
# Equilibrium strategies
# ---------------------------------------------------------------------------


def equilibrium_strategies(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                           x: np.ndarray, v: np.ndarray, y: np.ndarray,
                           dlogu_x: np.ndarray, dlogu_y: np.ndarray,
                           log_u_normalized: float, t: float = 0.0,
                           renormalize: bool = False) -> dict:
    """Equilibrium weights at one state from the gradients of log u.

    pi_i = mw_i + kappa (x_i D_i log u + (tau sigma^{-1})' D_y log u)_i with
    kappa = 1 + (1-delta) peer / (delta X_total); the gradient terms are
    shared by all investors, so rows differ only through diagnostics.
    Simplex deviations are reported, not projected (renormalize divides by
    the total instead).
    """
    if config.delta <= 0.0:
        raise DomainError("equilibrium strategy formula requires delta > 0")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, N = config.n_stocks, config.n_investors
    x_total = float(x.sum())
    mw = x / x_total
    peer = float(np.mean(v / config.v0_array()))
    kappa = 1.0 + (1.0 - config.delta) * peer / (config.delta * x_total)

    meas = MeasureState(y=y, m=peer)
    sig = oracle.sigma(t, x, meas)
    tav = oracle.tau(t, x, y)
    if np.linalg.cond(sig) > oracle.cond_threshold:
        raise SingularMarketError("sigma is singular at the strategy evaluation state")
    tilt_y = np.linalg.solve(sig.T, tav.T @ np.asarray(dlogu_y, dtype=np.float64))
    tilt = kappa * (x * np.asarray(dlogu_x, dtype=np.float64) + tilt_y)
    pi = mw + tilt
    if renormalize:
        pi = pi / pi.sum()
    weights = np.broadcast_to(pi, (N, n)).copy()
    return {
        "weights": weights,
        "sum": float(pi.sum()),
        "min": float(pi.min()),
        "kappa": kappa,
        "log_u_normalized": log_u_normalized,
    }


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    """Converged fixed point of the wealth-mean map plus diagnostics."""

    m_path: np.ndarray             # (K+1,)
    u_per_investor: np.ndarray     # (N,) values including the e^c factor
    u_se: np.ndarray               # (N,)
    strategies: np.ndarray         # (K+1, N, n)
    strategy_sum: np.ndarray       # (K+1,)
    strategy_min: np.ndarray       # (K+1,)
    residual: float                # sup-node relative |Phi(m) - m| at the reported m
    residual_abs: float
    iterations: int
    converged: bool
    A_path: np.ndarray
    D_path: np.ndarray
    K_upper: np.ndarray
    tau_K_estimate: dict
    uniqueness: UniquenessResult | None
    grad: GradientBlock | None
    profile: UProfile

    def to_dict(self) -> dict:
        return {
            "m_path": self.m_path.tolist(),
            "u_per_investor": self.u_per_investor.tolist(),
            "u_se": self.u_se.tolist(),
            "strategy_sum": self.strategy_sum.tolist(),
            "strategy_min": self.strategy_min.tolist(),
            "residual": self.residual,
            "residual_abs": self.residual_abs,
            "iterations": self.iterations,
            "converged": self.converged,
            "A_path": self.A_path.tolist(),
            "D_path": self.D_path.tolist(),
            "K_upper": [v if np.isfinite(v) else "inf" for v in self.K_upper],
            "tau_K_estimate": self.tau_K_estimate,
            "uniqueness": self.uniqueness.to_dict() if self.uniqueness else None,
        }


def solve_nash(oracle: MarketCoefficientOracle, config: ScenarioConfig,
               damping: float | None = None, tol: float | None = None,
               max_iters: int | None = None, seed: int | None = None,
               strategies: StrategyRule | None = None, n_paths: int | None = None,
               m_mode: str = "path", compute_uniqueness: bool = True,
               grad_paths: int | None = None) -> EquilibriumResult:
    """Damped fixed-point iteration m <- (1-w) m + w Phi(m) along the grid.

    Each sweep re-estimates the u-hat horizon profile by Monte Carlo with the
    peer leg of the benchmark frozen at the current m (common random numbers
    make the sweep map deterministic).  delta = 1 makes Phi independent of m
    and converges in one sweep.  m_mode="constant" restricts m to a constant
    path and applies the map at the initial node (scalar fixed point).
    """
    damping = damping if damping is not None else config.solver.damping
    tol = tol if tol is not None else config.solver.tol
    max_iters = max_iters if max_iters is not None else config.solver.max_sweeps
    seed = seed if seed is not None else config.seed
    n_paths = n_paths if n_paths is not None else config.solver.n_paths
    grad_paths = grad_paths if grad_paths is not None else max(n_paths // 4, 1000)
    if m_mode not in ("path", "constant"):
        raise DomainError("m_mode must be 'path' or 'constant'")

    K = config.steps
    omega = 1.0 if config.delta == 1.0 else damping

    def run(m_path):
        return u_profile_mc(oracle, config, n_paths, seed=seed, strategies=strategies,
                            frozen_m=m_path)

    # Warm start from the simulated peer-average mean path.
    warm = u_profile_mc(oracle, config, n_paths, seed=seed, strategies=strategies)
    m = warm.peer_mean.copy() if m_mode == "path" else np.full(K + 1, float(warm.peer_mean.mean()))

    converged = False
    iterations = 0
    residual = residual_abs = float("inf")
    prof = warm
    for _ in range(max_iters + 1):
        prof = run(m)
        Phi, S, A = phi_profile(prof, config)
        if m_mode == "constant":
            Phi = np.full(K + 1, float(Phi[0]))
        residual_abs = float(np.max(np.abs(Phi - m)))
        residual = float(np.max(np.abs(Phi - m) / (1.0 + np.abs(m))))
        if residual <= tol:
            converged = True
            break
        if iterations >= max_iters:
            break
        m = (1.0 - omega) * m + omega * Phi
        iterations += 1

    # Contraction quantities from bumped-m horizon profiles (common streams).
    h = max(config.solver.bump_abs, config.solver.bump_rel * float(np.mean(np.abs(m))))
    prof_p = run(m + h)
    prof_m = run(np.maximum(m - h, 1e-12))
    dm_u_rev = (u_hat_along_path(prof_p) - u_hat_along_path(prof_m)) / (2.0 * h)
    u_rev = u_hat_along_path(prof)
    A_path, D_path, K_upper = contraction_region(u_rev[:, None], dm_u_rev[:, None], config)

    # Exit-time statistics of total capitalization from the region [0, K_upper).
    tau_stats = _exit_statistics(oracle, config, strategies, seed, n_paths, K_upper)

    uniq = None
    if compute_uniqueness:
        k_eval = K // 2
        uniq = uniqueness_probability(oracle, config, float(K_upper[k_eval]),
                                      t_eval=float(config.grid[k_eval]),
                                      n_paths=n_paths, seed=seed, strategies=strategies,
                                      k_upper_path=K_upper)

    # Equilibrium strategies along the mean path, horizon-matched gradients.
    grad = grad_log_u(oracle, config, m0=m if m_mode == "path" else float(m[0]),
                      n_paths=grad_paths, seed=seed, strategies=strategies)
    strat = np.empty((K + 1, config.n_investors, config.n_stocks))
    s_sum = np.empty(K + 1)
    s_min = np.empty(K + 1)
    logu_path = np.log(u_hat_along_path(prof))
    for k in range(K + 1):
        rev = K - k
        out = equilibrium_strategies(
            oracle, config, prof.x_vec[k], prof.v_mean[k], prof.y_mean[k],
            grad.profile_x[rev], grad.profile_y[rev], float(logu_path[k]),
            t=float(config.grid[k]))
        strat[k] = out["weights"]
        s_sum[k] = out["sum"]
        s_min[k] = out["min"]

    # Reported u: endogenous-benchmark run under the constructed strategies.
    final = u_profile_mc(oracle, config, n_paths, seed=seed,
                         strategies=profile_rule(strat))
    u_per = np.exp(config.c_array()) * final.p[-1]
    u_se = np.exp(config.c_array()) * final.p_se[-1]

    return EquilibriumResult(
        m_path=m, u_per_investor=u_per, u_se=u_se, strategies=strat,
        strategy_sum=s_sum, strategy_min=s_min,
        residual=residual, residual_abs=residual_abs,
        iterations=iterations, converged=converged,
        A_path=A_path.ravel(), D_path=D_path.ravel(), K_upper=K_upper.ravel(),
        tau_K_estimate=tau_stats, uniqueness=uniq, grad=grad, profile=prof,
    )


def _exit_statistics(oracle, config, strategies, seed, n_paths, k_upper_path) -> dict:
    grid = config.grid
    bounds = np.asarray(k_upper_path, dtype=np.float64)
    exit_count = 0
    exit_time_sum = 0.0
    total = 0
    for start, count in chunk_ranges(n_paths):
        paths = simulate_n_particle(oracle, config, strategies, seed, n_paths=count,
                                    record_strategies=False, path_offset=start)
        x_tot = paths.X.sum(axis=2)
        outside = x_tot > bounds[None, :]
        ever = outside.any(axis=1)
        exit_count += int(np.count_nonzero(ever))
        if np.any(ever):
            first = np.argmax(outside[ever], axis=1)
            exit_time_sum += float(grid[first].sum())
        total += count
    frac = exit_count / total
    return {
        "exit_fraction": frac,
        "exit_fraction_se": math.sqrt(max(frac * (1 - frac), 1e-12) / total),
        "mean_exit_time": exit_time_sum / exit_count if exit_count else float("nan"),
        "n_paths": total,
    }
