"""Numerical checks of the large-population limit.

Three probes: the per-N optimal proportions against the mean-field value,
approximate-equilibrium gaps when one player deviates from the mean-field
strategy, and Wasserstein decay of the empirical wealth measure toward the
conditional law on matched common noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arbitrage import u_profile_mc
from .engine import (INNER_PURPOSE, benchmark_path, market_portfolio_rule,
                     simulate_deflator, simulate_mean_field, simulate_n_particle)
from .errors import DomainError
from .measure import empirical_measure, wasserstein2_1d
from .mfg import solve_mfe
from .model import MarketCoefficientOracle, ScenarioConfig
from .rng import substream
from .engine import _draw_inner


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Per-N summaries against the mean-field reference."""

    N_values: tuple[int, ...]
    u_N: np.ndarray          # (len(N),) mean over investors and seeds
    u_N_se: np.ndarray
    u_mf: float
    u_mf_se: float
    gaps: np.ndarray
    gap_se: np.ndarray
    inversions: int          # count of gap increases along N
    failures: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "N_values": list(self.N_values),
            "u_N": self.u_N.tolist(), "u_N_se": self.u_N_se.tolist(),
            "u_mf": self.u_mf, "u_mf_se": self.u_mf_se,
            "gaps": self.gaps.tolist(), "gap_se": self.gap_se.tolist(),
            "inversions": self.inversions,
            "failures": list(self.failures),
        }


def sweep_n(oracle: MarketCoefficientOracle, template: ScenarioConfig,
            N_values, seeds=(0,), n_paths: int | None = None,
            mfe_kwargs: dict | None = None,
            strategy_profile: np.ndarray | str | None = "mfe") -> ConvergenceReport:
    """Optimal-proportion gaps |mean u_N - u_mf| for increasing N.

    Each (N, seed) run redraws (c, v0) i.i.d. from the template's laws and
    reuses the template's market noise streams, so the N-trend is measured
    under common random numbers.  The mean-field value is solved once; by
    default the per-N systems run under the mean-field strategy profile (the
    approximate-equilibrium construction, which is what converges to the
    mean-field value).  Pass a (steps+1, n) profile or None (market
    portfolio) to override.
    """
    N_values = tuple(int(N) for N in N_values)
    if any(b <= a for a, b in zip(N_values, N_values[1:])):
        raise DomainError("N_values must be strictly increasing")
    if n_paths is None:
        n_paths = template.solver.n_paths

    mfe = solve_mfe(oracle, template, **(mfe_kwargs or {}))
    u_mf, u_mf_se = mfe.u, mfe.u_se

    from .engine import profile_rule

    if isinstance(strategy_profile, str) and strategy_profile == "mfe":
        profile = np.asarray(mfe.strategy_path, dtype=np.float64)
    elif strategy_profile is None:
        profile = None
    else:
        profile = np.asarray(strategy_profile, dtype=np.float64)
    rule = market_portfolio_rule() if profile is None else profile_rule(profile)

    # Mean-field reference value on the same noise streams as the per-N runs:
    # the gap then isolates finite-N effects (draw fluctuations and the
    # empirical coupling) via common random numbers.
    refs = {int(s): _mf_value_matched(oracle, template, profile, n_paths, int(s))
            for s in seeds}

    u_means = np.empty(len(N_values))
    u_ses = np.empty(len(N_values))
    gaps = np.empty(len(N_values))
    gap_ses = np.empty(len(N_values))
    failures: list[str] = []
    for i, N in enumerate(N_values):
        vals = []
        diffs = []
        try:
            for s_idx, seed in enumerate(seeds):
                cfg = template.draw_investors(N, stream_index=1000 * s_idx + N)
                prof = u_profile_mc(oracle, cfg, n_paths, seed=int(seed), strategies=rule)
                u_val = float(np.mean(np.exp(cfg.c_array())) * prof.p[-1])
                vals.append(u_val)
                diffs.append(abs(u_val - refs[int(seed)]))
        except Exception as exc:  # partial report with failure markers
            failures.append(f"N={N}: {exc}")
            u_means[i] = u_ses[i] = gaps[i] = gap_ses[i] = np.nan
            continue
        u_means[i] = float(np.mean(vals))
        u_ses[i] = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        gaps[i] = float(np.mean(diffs))
        gap_ses[i] = float(np.std(diffs, ddof=1) / math.sqrt(len(diffs))) if len(diffs) > 1 else 0.0

    finite = np.isfinite(gaps)
    g = gaps[finite]
    inversions = int(np.sum(np.diff(g) > 0))
    return ConvergenceReport(N_values=N_values, u_N=u_means, u_N_se=u_ses,
                             u_mf=u_mf, u_mf_se=u_mf_se, gaps=gaps, gap_se=gap_ses,
                             inversions=inversions, failures=tuple(failures))


def _mf_value_matched(oracle: MarketCoefficientOracle, template: ScenarioConfig,
                      profile: np.ndarray | None, n_paths: int, seed: int,
                      k_inner: int = 256, chunk: int = 512) -> float:
    """Mean-field value under a deterministic strategy profile, matched noise.

    One common-noise path per market-noise path of the per-N runs, so the
    per-seed difference u_N - u_ref cancels the shared Brownian fluctuations.
    """
    from .engine import profile_rule as _pr

    rule = market_portfolio_rule() if profile is None else _pr(profile)
    total = 0.0
    count = 0
    start = 0
    while start < n_paths:
        take = min(chunk, n_paths - start)
        mf = simulate_mean_field(oracle, template, rule, k_inner=k_inner, seed=seed,
                                 n_outer=take, path_offset=start)
        ee_c = np.exp(mf.c_draws).mean(axis=1)
        vb0 = template.delta * mf.X[:, 0].sum(axis=1) + (1 - template.delta) * mf.m[:, 0]
        vbT = template.delta * mf.X[:, -1].sum(axis=1) + (1 - template.delta) * mf.m[:, -1]
        total += float(np.sum(ee_c * vbT * mf.L[:, -1] / vb0))
        count += take
        start += take
    return total / count


# ---------------------------------------------------------------------------
# Propagation-of-chaos metric
# ---------------------------------------------------------------------------


def chaos_metric(oracle: MarketCoefficientOracle, template: ScenarioConfig,
                 N_values, node_times, seeds=(0, 1, 2), k_reference: int = 1024) -> dict:
    """W2 between the N-investor wealth marginal and the conditional law.

    For each seed, the N-particle system and the high-resolution mean-field
    reference share the market noise stream and the investor-draw stream, so
    the distance isolates finite-N effects (an N = k_reference run matches
    the reference and gives W2 = 0).  Returns per-node decay tables and a
    log-log slope fit.
    """
    N_values = tuple(int(N) for N in N_values)
    grid = template.grid
    nodes = []
    for t in node_times:
        k = int(np.argmin(np.abs(grid - t)))
        if abs(grid[k] - t) > 1e-9 + 1e-9 * abs(t):
            raise DomainError(f"node time {t} is not on the grid")
        nodes.append(k)

    w2 = np.zeros((len(N_values), len(nodes)))
    for s_idx, seed in enumerate(seeds):
        seed = int(seed)
        ref = simulate_mean_field(oracle, template, market_portfolio_rule(),
                                  k_inner=k_reference, seed=seed, n_outer=1)
        for i, N in enumerate(N_values):
            v0, c = _draw_inner(template, seed, 0, N)
            cfg = template.with_investors(c[:N], v0[:N], N)
            paths = simulate_n_particle(oracle, cfg, market_portfolio_rule(), seed,
                                        n_paths=1, record_strategies=False)
            for j, k in enumerate(nodes):
                a = empirical_measure(paths.V[0, k, :])
                b = empirical_measure(ref.inner[0, :, k])
                w2[i, j] += wasserstein2_1d(a, b) ** 2
    w2 = np.sqrt(w2 / len(seeds))

    mean_w2 = w2.mean(axis=1)
    if len(N_values) >= 2:
        slope, slope_se = _loglog_fit(np.asarray(N_values, dtype=np.float64), mean_w2)
    else:
        slope, slope_se = float("nan"), float("nan")
    return {
        "N_values": list(N_values),
        "node_times": [float(grid[k]) for k in nodes],
        "w2": w2.tolist(),
        "mean_w2": mean_w2.tolist(),
        "slope": slope,
        "slope_se": slope_se,
    }


def iid_decay_slope(N_values, seeds=(0, 1, 2, 3), mu: float = 0.0, sigma: float = 0.25,
                    m_reference: int = 65536) -> tuple[float, float]:
    """Sanity decay of W2 for i.i.d. lognormal samples against a big reference.

    The classical empirical-measure rate gives slope approximately -1/2.
    """
    N_values = tuple(int(N) for N in N_values)
    w2 = np.zeros(len(N_values))
    for s in seeds:
        rng = substream(int(s), "iid-sanity")
        ref = empirical_measure(np.exp(rng.normal(mu, sigma, size=m_reference)))
        for i, N in enumerate(N_values):
            sample = empirical_measure(np.exp(rng.normal(mu, sigma, size=N)))
            w2[i] += wasserstein2_1d(sample, ref) ** 2
    w2 = np.sqrt(w2 / len(seeds))
    return _loglog_fit(np.asarray(N_values, dtype=np.float64), w2)


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    lx, ly = np.log(x), np.log(np.maximum(y, 1e-300))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = max(len(lx) - 2, 1)
    resid = ly - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


# ---------------------------------------------------------------------------
# Approximate-equilibrium gap
# ---------------------------------------------------------------------------


def default_deviation_grid(n: int, seed: int, extra_random: int = 2) -> list[np.ndarray]:
    """Market portfolio marker (None), equal weight, and random simplex points."""
    rng = substream(seed, "deviation-grid")
    grid: list = [None, np.full(n, 1.0 / n)]
    for _ in range(extra_random):
        g = rng.exponential(1.0, size=n)
        grid.append(g / g.sum())
    return grid


def epsilon_equilibrium(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                        deviation_grid=None, n_paths: int | None = None,
                        seed: int | None = None, base_profile: np.ndarray | None = None) -> dict:
    """Best-response gap of player 1 against a finite deviation grid.

    eps-hat = max over deviations of (J(base) - J(deviation))_+ with paired
    Monte Carlo differences (common random numbers).  The base strategy is
    the market portfolio unless a per-node profile is supplied.  J is the
    player's required initial proportion e^c E[Vbench(T) L(T)] / Vbench(0).
    """
    if n_paths is None:
        n_paths = config.solver.n_paths
    if seed is None:
        seed = config.seed
    if deviation_grid is None:
        deviation_grid = default_deviation_grid(config.n_stocks, seed)
    if len(deviation_grid) == 0:
        raise DomainError("deviation grid must be nonempty")

    from .engine import profile_rule, constant_weights_rule

    def base_rule():
        if base_profile is None:
            return market_portfolio_rule()
        return profile_rule(base_profile)

    def deviated_rule(dev):
        base = base_rule()

        def rule(k, t, X, V, Y, W):
            pi = base(k, t, X, V, Y, W)
            if dev is None:
                pi[:, 0, :] = X / X.sum(axis=-1, keepdims=True)
            else:
                pi[:, 0, :] = dev
            return pi

        return rule

    def terminal_g(rule):
        paths = simulate_n_particle(oracle, config, rule, seed, n_paths=n_paths,
                                    record_strategies=False)
        defl = simulate_deflator(paths, oracle, config)
        bench = benchmark_path(paths, config)
        return bench.Vbench[:, -1] * defl.L[:, -1] / bench.Vbench[:, 0]

    c1 = math.exp(config.c[0])
    g_base = c1 * terminal_g(base_rule())
    gaps = []
    ses = []
    for dev in deviation_grid:
        g_dev = c1 * terminal_g(deviated_rule(dev))
        diff = g_base - g_dev
        gaps.append(float(diff.mean()))
        ses.append(float(diff.std(ddof=1) / math.sqrt(len(diff))))
    best = int(np.argmax(gaps))
    eps = max(0.0, gaps[best])
    return {
        "epsilon": eps,
        "epsilon_se": ses[best],
        "per_deviation_gap": gaps,
        "per_deviation_se": ses,
        "n_paths": n_paths,
    }
