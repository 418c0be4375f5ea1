"""Time-discretized simulation of the coupled N-particle market.

State updates use a log-Euler scheme (exponential of the Euler increment of
the log state), which keeps stock prices and wealths strictly positive and is
exact per step for coefficients frozen at the step start.  The invested
capital Y is recomputed endogenously from wealths and strategies at every
node by default; an exogenous mode integrates the (gamma, tau) SDE instead.

All randomness flows through counter-based substreams (see rng.py); results
are bit-identical for a given (config, oracle, seed) regardless of how the
caller batches paths across workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AdmissibilityError, ConfigError, DeflatorError, DomainError, SimulationError
from .model import MarketCoefficientOracle, MeasureState, ScenarioConfig
from .rng import normal_block, substream

# Guards for stiff corners of degenerate markets (near-collapsed stocks in the
# volatility-stabilized model).  A per-step log-drift beyond +-MAX_LOG_DRIFT or
# a total log-increment beyond +-MAX_LOG_STEP never occurs on sane paths, so
# the clamps are exact identities there; they only stop explicit-scheme
# overshoot from cascading into overflow.  States are floored away from 0 so
# positivity survives float underflow.
MAX_LOG_DRIFT = 1.0
MAX_LOG_STEP = 20.0
STATE_FLOOR = 1e-300
STATE_CAP = 1e300
LOGL_FLOOR = -700.0


def _apply_increment(state: np.ndarray, drift_dt: np.ndarray, noise: np.ndarray) -> np.ndarray:
    dlog = np.clip(drift_dt, -MAX_LOG_DRIFT, MAX_LOG_DRIFT) + noise
    out = state * np.exp(np.clip(dlog, -MAX_LOG_STEP, MAX_LOG_STEP))
    return np.clip(out, STATE_FLOOR, STATE_CAP)

NOISE_PURPOSE = "market-noise"       # shared by N-particle W and common-noise B
INNER_PURPOSE = "inner-draws"

# A strategy rule maps (step k, time t, X (R,n), V (R,N), Y (R,n), W_cum (R,n))
# to weights (R, N, n).  Closed-loop feedback rules read (X, V, Y); open-loop
# rules read (t, W_cum) and whatever initial data they captured at build time.
StrategyRule = Callable[[int, float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Strategy rules
# ---------------------------------------------------------------------------


def market_portfolio_rule() -> StrategyRule:
    """Every investor holds the market portfolio x / sum(x)."""

    def rule(k, t, X, V, Y, W):
        mw = X / X.sum(axis=-1, keepdims=True)
        return np.broadcast_to(mw[:, None, :], (X.shape[0], V.shape[1], X.shape[1])).copy()

    return rule


def constant_weights_rule(w) -> StrategyRule:
    """All investors hold fixed weights w (one vector, or one per investor)."""
    w = np.asarray(w, dtype=np.float64)

    def rule(k, t, X, V, Y, W):
        R, N, n = X.shape[0], V.shape[1], X.shape[1]
        if w.ndim == 1:
            return np.broadcast_to(w, (R, N, n)).copy()
        return np.broadcast_to(w[None, :, :], (R, N, n)).copy()

    return rule


def profile_rule(profile: np.ndarray) -> StrategyRule:
    """Deterministic per-node strategies, shape (steps+1, N, n) or (steps+1, n)."""
    profile = np.asarray(profile, dtype=np.float64)

    def rule(k, t, X, V, Y, W):
        R, N, n = X.shape[0], V.shape[1], X.shape[1]
        kk = min(k, profile.shape[0] - 1)
        p = profile[kk]
        if p.ndim == 1:
            return np.broadcast_to(p, (R, N, n)).copy()
        return np.broadcast_to(p[None, :, :], (R, N, n)).copy()

    return rule


def outer_profile_rule(profile: np.ndarray) -> StrategyRule:
    """Per-replication per-node strategies, shape (R, steps+1, n).

    Used for B-measurable mean-field strategy maps: every inner sample of
    replication r applies profile[r, k].
    """
    profile = np.asarray(profile, dtype=np.float64)

    def rule(k, t, X, V, Y, W):
        R, N = X.shape[0], V.shape[1]
        kk = min(k, profile.shape[1] - 1)
        return np.broadcast_to(profile[:, kk][:, None, :], (R, N, profile.shape[2])).copy()

    return rule


# ---------------------------------------------------------------------------
# Path containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParticlePathSet:
    """Trajectories of the N-particle system, one replication per row.

    X : (R, K+1, n) stock prices, strictly positive.
    V : (R, K+1, N) wealths, strictly positive.
    Y : (R, K+1, n) invested capital.
    dW : (R, K, n) Brownian increments (already scaled by sqrt(dt)).
    strategies : (R, K+1, N, n) or None.
    """

    grid: np.ndarray
    X: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    dW: np.ndarray
    strategies: np.ndarray | None
    endogenous_y: bool
    y_clamp_count: int
    seed: int
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def steps(self) -> int:
        return self.grid.shape[0] - 1

    def peer_average(self, v0: np.ndarray) -> np.ndarray:
        """(1/N) sum_l V_l(t)/v_l, shape (R, K+1)."""
        return (self.V / np.asarray(v0)[None, None, :]).mean(axis=2)


@dataclass(frozen=True, eq=False)
class DeflatorPath:
    """Deflator L and the market prices of risk along a path set."""

    L: np.ndarray        # (R, K+1), positive, L[:,0] = 1
    log_increments: np.ndarray  # (R, K)
    theta: np.ndarray    # (R, K+1, n)
    lam: np.ndarray      # (R, K+1, n)
    Theta: np.ndarray    # (R, K+1) magnitude sqrt(|theta|^2 + |lam|^2)


@dataclass(frozen=True, eq=False)
class BenchmarkPath:
    """Benchmark mixing total capitalization and the peer-average performance."""

    Vbench: np.ndarray        # (R, K+1)
    market_total: np.ndarray  # (R, K+1)
    peer_average: np.ndarray  # (R, K+1)
    rel_log_performance: np.ndarray  # (R, N): log(V_l(T) / Vbench(T))


@dataclass(frozen=True, eq=False)
class MeanFieldPathSet:
    """Common-noise mean-field paths: inner wealth samples share each B row.

    B : (P, K, n) common-noise increments.
    X : (P, K+1, n) stock paths.
    inner : (P, K_inner, K+1) wealth paths.
    Z : (P, K+1, n) conditional mean invested capital (inner average).
    m : (P, K+1) conditional mean wealth (inner average).
    """

    grid: np.ndarray
    B: np.ndarray
    X: np.ndarray
    inner: np.ndarray
    Z: np.ndarray
    m: np.ndarray
    v0_draws: np.ndarray  # (P, K_inner)
    c_draws: np.ndarray   # (P, K_inner)
    L: np.ndarray         # (P, K+1) deflator along each common-noise path
    strategies: np.ndarray  # (P, K+1, n) strategy actually applied (B-measurable)


# ---------------------------------------------------------------------------
# Simplex admissibility
# ---------------------------------------------------------------------------


def _check_admissible(pi: np.ndarray, strict: bool, tol: float, step: int):
    if not strict:
        return
    if np.any(pi < -tol) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > tol):
        raise AdmissibilityError(f"strategy left the simplex beyond tolerance at step {step}")


# ---------------------------------------------------------------------------
# N-particle simulation
# ---------------------------------------------------------------------------


def simulate_n_particle(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                        strategies: StrategyRule | None = None, seed: int | None = None,
                        n_paths: int = 1, record_strategies: bool = True,
                        y_mode: str = "endogenous", path_offset: int = 0) -> ParticlePathSet:
    """Simulate the coupled stock/wealth/invested-capital system.

    Paths are reproducible bit-exactly from (config, oracle, seed); `n_paths`
    independent replications are stacked on axis 0.  `path_offset` selects a
    window into the seed's path space (used by the chunked estimators).
    """
    if strategies is None:
        strategies = market_portfolio_rule()
    if seed is None:
        seed = config.seed
    if y_mode not in ("endogenous", "exogenous"):
        raise ConfigError("y_mode must be 'endogenous' or 'exogenous'")

    n, N, K = config.n_stocks, config.n_investors, config.steps
    dt = config.dt
    sqdt = np.sqrt(dt)
    grid = config.grid
    R = n_paths

    dW = normal_block(seed, NOISE_PURPOSE, path_offset, R, (K, n)) * sqdt

    X = np.empty((R, K + 1, n))
    V = np.empty((R, K + 1, N))
    Y = np.empty((R, K + 1, n))
    pis = np.empty((R, K + 1, N, n)) if record_strategies else None

    X[:, 0] = config.x0_array()
    V[:, 0] = config.v0_array()
    W_cum = np.zeros((R, n))
    y_prev = np.broadcast_to(config.y0_array(), (R, n)).copy()
    clamp_count = 0
    strict = config.solver.strict_simplex

    v0 = config.v0_array()

    for k in range(K + 1):
        t = grid[k]
        Xk = X[:, k]
        Vk = V[:, k]
        pi_k = strategies(k, t, Xk, Vk, y_prev, W_cum)
        _check_admissible(pi_k, strict, 1e-9, k)
        if record_strategies:
            pis[:, k] = pi_k

        if y_mode == "endogenous":
            Yk = np.einsum("rl,rli->ri", Vk, pi_k) / N
        else:
            Yk = y_prev
        Y[:, k] = Yk

        if k == K:
            break

        peer = (Vk / v0[None, :]).mean(axis=1)
        # Non-simplex strategies can push the invested-capital mean negative;
        # coefficients are evaluated at the clamped value (diagnostic count).
        if np.any(Yk < 0.0):
            clamp_count += int(np.count_nonzero(Yk < 0.0))
            Yk = np.maximum(Yk, 0.0)
        meas = MeasureState(y=Yk, m=peer)
        beta = oracle.beta(t, Xk, meas)
        if not np.all(np.isfinite(beta)):
            raise SimulationError("non-finite drift evaluation", step=k)
        dWk = dW[:, k]

        if oracle.sigma_diag is not None and oracle.alpha_diag is not None:
            sd = oracle.sigma_diag(t, Xk, meas)
            ad = oracle.alpha_diag(t, Xk, meas)
            if not np.all(np.isfinite(sd)):
                raise SimulationError("non-finite volatility evaluation", step=k)
            xdrift_dt = (beta - 0.5 * ad) * dt
            xnoise = sd * dWk
            pib = np.einsum("rli,ri->rl", pi_k, beta)
            pial = np.einsum("rli,ri->rl", pi_k**2, ad)
            pisdW = np.einsum("rli,ri->rl", pi_k, sd * dWk)
        else:
            sig = oracle.sigma(t, Xk, meas)
            if not np.all(np.isfinite(sig)):
                raise SimulationError("non-finite volatility evaluation", step=k)
            alpha = sig @ np.swapaxes(sig, -1, -2)
            xdrift_dt = (beta - 0.5 * np.diagonal(alpha, axis1=-2, axis2=-1)) * dt
            xnoise = np.einsum("rij,rj->ri", sig, dWk)
            pib = np.einsum("rli,ri->rl", pi_k, beta)
            pial = np.einsum("rli,rij,rlj->rl", pi_k, alpha, pi_k)
            pisdW = np.einsum("rli,rij,rj->rl", pi_k, sig, dWk)

        X[:, k + 1] = _apply_increment(Xk, xdrift_dt, xnoise)
        V[:, k + 1] = _apply_increment(Vk, (pib - 0.5 * pial) * dt, pisdW)
        if not (np.all(np.isfinite(X[:, k + 1])) and np.all(np.isfinite(V[:, k + 1]))):
            raise SimulationError("state became non-finite", step=k)

        if y_mode == "exogenous":
            gam = oracle.gamma(t, Xk, Yk)
            if oracle.tau_diag is not None:
                dY = gam * dt + oracle.tau_diag(t, Xk, Yk) * dWk
            else:
                dY = gam * dt + np.einsum("rij,rj->ri", oracle.tau(t, Xk, Yk), dWk)
            y_next = Yk + dY
            clamp_count += int(np.count_nonzero(y_next < 0.0))
            y_prev = np.maximum(y_next, 0.0)
        else:
            y_prev = Yk
        W_cum = W_cum + dWk

    return ParticlePathSet(grid=grid, X=X, V=V, Y=Y, dW=dW, strategies=pis,
                           endogenous_y=(y_mode == "endogenous"),
                           y_clamp_count=clamp_count, seed=seed, path_offset=path_offset)


# ---------------------------------------------------------------------------
# Deflator
# ---------------------------------------------------------------------------


def simulate_deflator(paths: ParticlePathSet, oracle: MarketCoefficientOracle,
                      config: ScenarioConfig) -> DeflatorPath:
    """Deflator L along the stored paths, driven by the same stored increments.

    theta solves sigma theta = beta and lam solves tau lam = gamma nodewise;
    when the market has no invested-capital dynamics, lam = 0.
    """
    R, K1, n = paths.X.shape
    K = K1 - 1
    dt = float(paths.grid[1] - paths.grid[0])
    v0 = config.v0_array()

    theta = np.empty((R, K1, n))
    lam = np.empty((R, K1, n))
    for k in range(K1):
        t = paths.grid[k]
        Xk = paths.X[:, k]
        Yk = np.maximum(paths.Y[:, k], 0.0)   # same clamp as the simulation's coefficient feed
        peer = (paths.V[:, k] / v0[None, :]).mean(axis=1)
        meas = MeasureState(y=Yk, m=peer)
        try:
            theta[:, k] = oracle.theta_of(t, Xk, meas)
            lam[:, k] = oracle.lam_of(t, Xk, Yk)
        except Exception as exc:
            raise DeflatorError(f"price-of-risk evaluation failed: {exc}", step=k) from exc
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(lam))):
        raise DeflatorError("non-finite price of risk along path")

    combined = theta + lam
    # Exponential martingale of the combined loading theta + lam.  The two
    # partial prices of risk act on the same Brownian source, so the exponent
    # compensator is |theta + lam|^2/2 (it reduces to (|theta|^2 + |lam|^2)/2
    # exactly when the loadings are orthogonal).
    comb2 = np.sum(combined**2, axis=-1)                         # (R, K+1)
    mag2 = np.sum(theta**2, axis=-1) + np.sum(lam**2, axis=-1)   # (R, K+1)
    incr = -np.einsum("rki,rki->rk", combined[:, :K], paths.dW) - 0.5 * comb2[:, :K] * dt
    logL = np.concatenate([np.zeros((R, 1)), np.cumsum(incr, axis=1)], axis=1)
    L = np.exp(np.maximum(logL, LOGL_FLOOR))
    return DeflatorPath(L=L, log_increments=incr, theta=theta, lam=lam, Theta=np.sqrt(mag2))


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def benchmark_path(paths: ParticlePathSet, config: ScenarioConfig,
                   frozen_m: np.ndarray | None = None) -> BenchmarkPath:
    """delta-weighted mix of total capitalization and peer-average performance.

    frozen_m replaces the simulated peer average by a given deterministic
    path (the device used inside the Nash fixed point).
    """
    if paths.V.shape[2] != config.n_investors or paths.X.shape[2] != config.n_stocks:
        raise DomainError("paths and config disagree on (n, N)")
    total = paths.X.sum(axis=2)
    peer = paths.peer_average(config.v0_array())
    m_used = peer if frozen_m is None else np.broadcast_to(np.asarray(frozen_m, dtype=np.float64), peer.shape)
    vbench = config.delta * total + (1.0 - config.delta) * m_used
    rel = np.log(paths.V[:, -1, :] / vbench[:, -1][:, None])
    return BenchmarkPath(Vbench=vbench, market_total=total, peer_average=peer,
                         rel_log_performance=rel)


# ---------------------------------------------------------------------------
# Mean-field simulation with common noise
# ---------------------------------------------------------------------------


def _draw_inner(config: ScenarioConfig, seed: int, outer_index: int, k_inner: int):
    """(v0, c) draws for one common-noise path, i.i.d. from the recorded laws.

    Falls back to resampling the empirical investor population when no law is
    configured; a homogeneous population therefore yields point masses.
    """
    rng = substream(seed, INNER_PURPOSE, outer_index)
    if config.v0_law is not None:
        v0 = np.maximum(np.abs(config.v0_law.sample(rng, k_inner)), 1e-8)
    else:
        pool = config.v0_array()
        v0 = pool[rng.integers(0, pool.size, size=k_inner)] if pool.size > 1 else np.full(k_inner, pool[0])
    if config.c_law is not None:
        c = config.c_law.sample(rng, k_inner)
    else:
        pool = config.c_array()
        c = pool[rng.integers(0, pool.size, size=k_inner)] if pool.size > 1 else np.full(k_inner, pool[0])
    return v0, c


def simulate_mean_field(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                        strategies: StrategyRule | None = None, k_inner: int | None = None,
                        seed: int | None = None, n_outer: int = 1,
                        path_offset: int = 0) -> MeanFieldPathSet:
    """Common-noise mean-field dynamics with inner (v0, c) sampling.

    One Brownian path B per outer row drives the stocks and all k_inner inner
    wealth paths; the conditional means Z and m are recomputed from the inner
    samples at every node and fed into the coefficients of the next step
    (explicit coupling).  Strategies must be B-measurable; the rule receives
    the inner wealth matrix and must return one weight vector per inner path,
    the applied strategy being their common value (inner average).
    """
    if strategies is None:
        strategies = market_portfolio_rule()
    if seed is None:
        seed = config.seed
    if k_inner is None:
        k_inner = config.solver.n_inner
    if k_inner < 2:
        raise ConfigError("k_inner must be >= 2, conditional means are undefined as estimates otherwise")

    n, K = config.n_stocks, config.steps
    P = n_outer
    dt = config.dt
    grid = config.grid
    dB = normal_block(seed, NOISE_PURPOSE, path_offset, P, (K, n)) * np.sqrt(dt)

    v0 = np.empty((P, k_inner))
    cd = np.empty((P, k_inner))
    for p in range(P):
        v0[p], cd[p] = _draw_inner(config, seed, path_offset + p, k_inner)

    X = np.empty((P, K + 1, n))
    inner = np.empty((P, k_inner, K + 1))
    Z = np.empty((P, K + 1, n))
    m = np.empty((P, K + 1))
    L = np.empty((P, K + 1))
    applied = np.empty((P, K + 1, n))

    X[:, 0] = config.x0_array()
    inner[:, :, 0] = v0
    L[:, 0] = 1.0
    W_cum = np.zeros((P, n))
    logL = np.zeros(P)
    z_prev = np.broadcast_to(config.y0_array(), (P, n)).copy()

    for k in range(K + 1):
        t = grid[k]
        Xk = X[:, k]
        Vk = inner[:, :, k]                      # (P, K_inner)
        pi_k = strategies(k, t, Xk, Vk, z_prev, W_cum)
        # Strategies must be B-measurable; the applied weight is the inner average.
        pi_b = pi_k.mean(axis=1)                 # (P, n)
        applied[:, k] = pi_b
        m[:, k] = Vk.mean(axis=1)
        Z[:, k] = m[:, k][:, None] * pi_b
        z_prev = Z[:, k]

        if k == K:
            break

        meas = MeasureState(y=np.maximum(Z[:, k], 0.0), m=m[:, k])
        beta = oracle.beta(t, Xk, meas)
        if not np.all(np.isfinite(beta)):
            raise SimulationError("non-finite drift evaluation", step=k)
        dBk = dB[:, k]
        if oracle.sigma_diag is not None and oracle.alpha_diag is not None:
            sd = oracle.sigma_diag(t, Xk, meas)
            ad = oracle.alpha_diag(t, Xk, meas)
            xdrift_dt = (beta - 0.5 * ad) * dt
            xnoise = sd * dBk
            pib = np.einsum("pi,pi->p", pi_b, beta)
            pial = np.einsum("pi,pi->p", pi_b**2, ad)
            pisdB = np.einsum("pi,pi->p", pi_b, sd * dBk)
        else:
            sig = oracle.sigma(t, Xk, meas)
            alpha = sig @ np.swapaxes(sig, -1, -2)
            xdrift_dt = (beta - 0.5 * np.diagonal(alpha, axis1=-2, axis2=-1)) * dt
            xnoise = np.einsum("pij,pj->pi", sig, dBk)
            pib = np.einsum("pi,pi->p", pi_b, beta)
            pial = np.einsum("pi,pij,pj->p", pi_b, alpha, pi_b)
            pisdB = np.einsum("pi,pij,pj->p", pi_b, sig, dBk)

        X[:, k + 1] = _apply_increment(Xk, xdrift_dt, xnoise)
        # dlogV is common across inner paths (B-measurable strategy).
        vfac = _apply_increment(np.ones(P), (pib - 0.5 * pial) * dt, pisdB)
        inner[:, :, k + 1] = np.maximum(Vk * vfac[:, None], STATE_FLOOR)

        theta = oracle.theta_of(t, Xk, meas)
        lam = oracle.lam_of(t, Xk, np.maximum(Z[:, k], 0.0))
        comb = theta + lam
        logL = logL - np.einsum("pi,pi->p", comb, dBk) - 0.5 * np.sum(comb**2, axis=-1) * dt
        L[:, k + 1] = np.exp(np.maximum(logL, LOGL_FLOOR))
        W_cum = W_cum + dBk

    return MeanFieldPathSet(grid=grid, B=dB, X=X, inner=inner, Z=Z, m=m,
                            v0_draws=v0, c_draws=cd, L=L, strategies=applied)


__all__ = [
    "StrategyRule", "market_portfolio_rule", "constant_weights_rule", "profile_rule",
    "outer_profile_rule", "ParticlePathSet", "DeflatorPath", "BenchmarkPath",
    "MeanFieldPathSet", "simulate_n_particle", "simulate_deflator", "benchmark_path",
    "simulate_mean_field", "NOISE_PURPOSE", "INNER_PURPOSE",
]
