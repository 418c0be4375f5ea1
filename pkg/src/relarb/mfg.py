"""Mean-field equilibrium with common noise.

The three-step scheme: (i) simulate stocks, inner wealth samples and the
conditional means (Z, m) under the current B-measurable strategy map;
(ii) estimate the representative optimal proportion and the implied optimal
map from the gradients of log u; (iii) damp both the strategy map and the
conditional-mean path until the two fixed points are within tolerance.  Only
the wealth-mean fixed point is required to be unique; distinct Z solutions
are accepted and reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arbitrage import GradientBlock, grad_log_u
from .engine import (MeanFieldPathSet, market_portfolio_rule, outer_profile_rule,
                     simulate_mean_field)
from .errors import DomainError, SingularMarketError
from .model import MarketCoefficientOracle, MeasureState, ScenarioConfig
from .nash import UniquenessResult, uniqueness_probability

VOL_DENOM_TOL = 1e-10

# Safeguard box for strategy-map iterates; far outside any admissible weight,
# it only stops a diverging sweep from overflowing the simulation.
STRATEGY_CLIP = 10.0


# ---------------------------------------------------------------------------
# Contraction region of the conditional-mean map
# ---------------------------------------------------------------------------


def contraction_region_mf(ee_cu_v, ee_cdu_v, delta: float,
                          oracle: MarketCoefficientOracle | None = None,
                          config: ScenarioConfig | None = None,
                          t_eval: float | None = None,
                          n_paths: int | None = None, seed: int | None = None):
    """(A~, D~, K~) from conditional statistics E[e^c u/v0 | B], E[e^c D_m u/v0 | B].

    D~ = 0 maps to K~ = +inf.  When an oracle and config are supplied, the
    Gaussian-CDF uniqueness probability and the empirical region frequency of
    total capitalization are attached (same flag policy as the N-player side).
    """
    ee_cu_v = np.asarray(ee_cu_v, dtype=np.float64)
    ee_cdu_v = np.asarray(ee_cdu_v, dtype=np.float64)
    A = 1.0 - (1.0 - delta) * ee_cu_v
    D = delta * np.abs(ee_cdu_v)
    with np.errstate(divide="ignore"):
        K = np.where(D > 0.0, A * A / np.where(D > 0.0, D, 1.0), np.inf)
    if K.ndim == 0:
        A, D, K = float(A), float(D), float(K)
    uniq: UniquenessResult | None = None
    if oracle is not None and config is not None:
        k_scalar = float(np.min(np.atleast_1d(K)))
        uniq = uniqueness_probability(oracle, config, k_scalar, t_eval=t_eval,
                                      n_paths=n_paths, seed=seed)
    return (A, D, K) if uniq is None else (A, D, K, uniq)


# ---------------------------------------------------------------------------
# Strategy formulas
# ---------------------------------------------------------------------------


def _solve_sigma_t(sig: np.ndarray, rhs: np.ndarray, cond_threshold: float) -> np.ndarray:
    """sigma^{-T} rhs, with a zero fast path so degenerate test markets work."""
    if not np.any(rhs):
        return np.zeros_like(rhs)
    if np.linalg.cond(sig) > cond_threshold:
        raise SingularMarketError("sigma is singular in the strategy formula")
    return np.linalg.solve(np.swapaxes(sig, -1, -2), rhs[..., None])[..., 0]


def v_star(x_total: float, u_hat: float, ee_c: float, ee_cu_v: float, delta: float) -> float:
    """Representative optimal wealth implied by the fixed point (u-hat convention)."""
    denom = 1.0 - (1.0 - delta) * ee_cu_v
    if denom <= 0.0:
        raise DomainError(f"optimal-wealth denominator {denom:.6g} <= 0 (infeasible preferences)")
    v = ee_c * delta * x_total * u_hat / denom
    if v <= 0.0:
        raise DomainError("optimal wealth V* must be positive")
    return v


def mfe_strategy(oracle: MarketCoefficientOracle, delta: float, t: float,
                 x: np.ndarray, z: np.ndarray, m: float,
                 grad_x: np.ndarray, grad_z: np.ndarray, grad_m: float,
                 u_hat: float, ee_c: float, ee_cu_v: float,
                 vol_dlm: np.ndarray, L: float = 1.0,
                 theta_lam: np.ndarray | None = None) -> dict:
    """Mean-field equilibrium weights at one state.

    pi_i = x_i D_i log u + (tau sigma^{-1})' D_z log u + (vol(m) sigma^{-1})' D_m log u
           + (delta X_total / V*) mw_i + ((1-delta)/V*) (vol(dL m) sigma^{-1})_i,
    where V*(t) = e^c u-hat(T-t) (delta X_total + (1-delta) m) is the optimal
    wealth implied by the state (it agrees with the fixed-point closed form
    of v_star at the equilibrium mean).  vol_dlm is the dW-loading of d(L m)
    (estimated from paths or closed form); the deflator state (L and the
    combined price of risk) recovers the m-flow loading vol(m) = vol_dlm/L +
    m (theta+lam) that weights the m-gradient channel.  Simplex deviations
    are reported, not projected.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x_total = float(x.sum())
    mw = x / x_total
    meas = MeasureState(y=z, m=m)
    sig = oracle.sigma(t, x, meas)
    tav = oracle.tau(t, x, z)
    if theta_lam is None:
        theta_lam = oracle.theta_of(t, x, meas) + oracle.lam_of(t, x, z)
    vol_dlm = np.asarray(vol_dlm, dtype=np.float64)
    vol_m = vol_dlm / L + m * np.asarray(theta_lam, dtype=np.float64)
    tilt_z = _solve_sigma_t(sig, tav.T @ np.asarray(grad_z, dtype=np.float64),
                            oracle.cond_threshold)
    tilt_m = grad_m * _solve_sigma_t(sig, vol_m, oracle.cond_threshold)
    vs = ee_c * u_hat * (delta * x_total + (1.0 - delta) * m)
    if vs <= 0.0:
        raise DomainError("optimal wealth V* must be positive")
    vol_term = _solve_sigma_t(sig, vol_dlm, oracle.cond_threshold)
    pi = (x * np.asarray(grad_x, dtype=np.float64) + tilt_z + tilt_m
          + (delta * x_total / vs) * mw + ((1.0 - delta) / vs) * vol_term)
    return {
        "weights": pi,
        "sum": float(pi.sum()),
        "min": float(pi.min()),
        "v_star": vs,
        "v_star_fixed_point": v_star(x_total, u_hat, ee_c, ee_cu_v, delta),
        "vol_m": vol_m,
    }


def vsm_closed_form(x: np.ndarray, z: np.ndarray, m: float,
                    grad_x: np.ndarray, grad_z: np.ndarray, grad_m: float,
                    L: float, theta_lam: np.ndarray, zeta: float, delta: float) -> dict:
    """Closed-form volatility-stabilized strategy and the conditional-mean volatility.

    vol(m)_i = [sqrt(x_i) D_i log u + z_i^{-1/2} D_z log u + delta sqrt(x_i)/Vb]
               / (1 - D_m log u),  Vb = delta X_total + (1-delta) m.
    theta_lam is the combined price-of-risk vector; the deflator's dW-loading
    is -theta_lam, so the benchmark term couples m through L (vol_m - m
    theta_lam), matching the d(L m) increments of the sampled route.  Also
    evaluates the printed drift of dm for the consistency diagnostic.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    gx = np.asarray(grad_x, dtype=np.float64)
    gz = np.asarray(grad_z, dtype=np.float64)
    theta_lam = np.asarray(theta_lam, dtype=np.float64)
    denom = 1.0 - float(grad_m)
    if abs(denom) < VOL_DENOM_TOL:
        raise DomainError("vol(m) denominator 1 - D_m log u vanishes")
    x_total = float(x.sum())
    vb = delta * x_total + (1.0 - delta) * m
    sx = np.sqrt(x)
    vol_m = (sx * gx + gz / np.sqrt(z) + delta * sx / vb) / denom
    mw = x / x_total
    # sigma^{-1} is diag(sqrt(x)) and tau sigma^{-1} is diag(sqrt(z x)).
    vol_dlm = L * (vol_m - m * theta_lam)
    pi = (x * gx + np.sqrt(z * x) * gz + vol_m * sx * grad_m
          + (delta * x_total * mw + (1.0 - delta) * sx * vol_dlm) / vb)
    theta_mag = float(np.linalg.norm(theta_lam))
    dm_drift = (1.0 - delta) / vb * (theta_mag * L + vol_m)
    return {
        "weights": pi,
        "vol_m": vol_m,
        "dm_drift": dm_drift,
        "sum": float(pi.sum()),
        "min": float(pi.min()),
    }


# ---------------------------------------------------------------------------
# vol(dL m) estimation
# ---------------------------------------------------------------------------


def estimate_vol_dlm(mf: MeanFieldPathSet, dt: float, window: int = 16) -> np.ndarray:
    """dW-loading of d(L m) per node, least squares of increments on dB.

    With >= 8 common-noise paths the regression pools across paths per step;
    otherwise a within-path moving window is used.  Returns (K, n).
    """
    lm = mf.L * mf.m                       # (P, K+1)
    dlm = np.diff(lm, axis=1)              # (P, K)
    dB = mf.B                              # (P, K, n)
    P, K, n = dB.shape
    out = np.zeros((K, n))
    if P >= 8:
        for k in range(K):
            sol, *_ = np.linalg.lstsq(dB[:, k, :], dlm[:, k], rcond=None)
            out[k] = sol
    else:
        half = max(window // 2, 1)
        for k in range(K):
            lo, hi = max(0, k - half), min(K, k + half + 1)
            xs = dB[:, lo:hi, :].reshape(-1, n)
            ys = dlm[:, lo:hi].reshape(-1)
            sol, *_ = np.linalg.lstsq(xs, ys, rcond=None)
            out[k] = sol
    return out


def _pi_star_profile(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                     mf: MeanFieldPathSet, grad: GradientBlock, u_hat_rev: np.ndarray,
                     ee_c: np.ndarray, ee_cv: np.ndarray, vol_dlm: np.ndarray) -> np.ndarray:
    """Vectorized optimal map over (paths, nodes); same formula as mfe_strategy."""
    P, K1, n = mf.X.shape
    K = K1 - 1
    delta = config.delta
    grid = mf.grid
    out = np.empty((P, K1, n))
    for k in range(K1):
        rev = K - k
        gx = grad.profile_x[rev]
        gz = grad.profile_y[rev]
        gm = float(grad.profile_m[rev])
        vdl = vol_dlm[min(k, K - 1)]
        Xk, Zk, mk = mf.X[:, k], np.maximum(mf.Z[:, k], 0.0), mf.m[:, k]
        x_total = Xk.sum(axis=1)
        mw = Xk / x_total[:, None]
        meas = MeasureState(y=Zk, m=mk)
        t = float(grid[k])
        theta_lam = oracle.theta_of(t, Xk, meas) + oracle.lam_of(t, Xk, Zk)
        # A collapsed deflator makes the vol(m) reconstruction meaningless;
        # floor the division and box the result so iterates stay finite.
        vol_m = vdl[None, :] / np.maximum(mf.L[:, k][:, None], 1e-10) + mk[:, None] * theta_lam
        vol_m = np.clip(vol_m, -1e6, 1e6)
        if oracle.sigma_diag is not None and oracle.tau_diag is not None:
            sd = oracle.sigma_diag(t, Xk, meas)
            td = oracle.tau_diag(t, Xk, Zk)
            rhs = td * gz[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                tilt_z = np.where(rhs == 0.0, 0.0, rhs / sd)
                tilt_m = np.where(gm * vol_m == 0.0, 0.0, gm * vol_m / sd)
                vol_b = np.broadcast_to(vdl, (P, n))
                vol_term = np.where(vol_b == 0.0, 0.0, vol_b / sd)
        else:
            sig = oracle.sigma(t, Xk, meas)
            tav = oracle.tau(t, Xk, Zk)
            sig_t = np.swapaxes(sig, -1, -2)
            rhs = np.einsum("pij,j->pi", np.swapaxes(tav, -1, -2), gz)
            tilt_z = (np.linalg.solve(sig_t, rhs[..., None])[..., 0]
                      if np.any(rhs) else np.zeros((P, n)))
            tilt_m = (gm * np.linalg.solve(sig_t, vol_m[..., None])[..., 0]
                      if gm != 0.0 and np.any(vol_m) else np.zeros((P, n)))
            vol_term = (np.linalg.solve(sig_t, np.broadcast_to(vdl, (P, n)).copy()[..., None])[..., 0]
                        if np.any(vdl) else np.zeros((P, n)))
        vs = ee_c * float(u_hat_rev[k]) * (delta * x_total + (1.0 - delta) * mk)
        if np.any(vs <= 0.0):
            raise DomainError("optimal wealth V* must be positive along a common-noise path")
        out[:, k] = (Xk * gx[None, :] + tilt_z + tilt_m
                     + (delta * x_total / vs)[:, None] * mw
                     + ((1.0 - delta) / vs)[:, None] * vol_term)
    return out


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeanFieldEquilibrium:
    """Joint fixed point of the strategy map and the conditional mean."""

    grid: np.ndarray
    m_path: np.ndarray            # (P, K+1) conditional-mean wealth per noise path
    Z_path: np.ndarray            # (P, K+1, n)
    u: float
    u_se: float
    strategy_path: np.ndarray     # (K+1, n) cross-path mean of the applied map
    strategy_paths: np.ndarray    # (P, K+1, n)
    strategy_sum: np.ndarray      # (K+1,)
    strategy_min: np.ndarray      # (K+1,)
    residual_m: float          # relative sup-node mean gap (stopping rule)
    residual_m_abs: float      # absolute sup-node mean gap
    residual_phi: float
    converged_m: bool
    converged_phi: bool
    iterations: int
    A_tilde: np.ndarray           # (K+1,) cross-path means
    D_tilde: np.ndarray
    K_tilde_upper: np.ndarray
    consistency_gap: float        # re-simulation reproduction error of m
    inner_se: float               # inner-sampling standard error of m at T
    grad: GradientBlock
    vol_dlm: np.ndarray           # (K, n)

    def to_dict(self) -> dict:
        return {
            "u": self.u, "u_se": self.u_se,
            "residual_m": self.residual_m, "residual_m_abs": self.residual_m_abs,
            "residual_phi": self.residual_phi,
            "converged_m": self.converged_m, "converged_phi": self.converged_phi,
            "iterations": self.iterations,
            "consistency_gap": self.consistency_gap,
            "inner_se": self.inner_se,
            "m_mean_path": self.m_path.mean(axis=0).tolist(),
            "strategy_path": self.strategy_path.tolist(),
            "strategy_sum": self.strategy_sum.tolist(),
            "strategy_min": self.strategy_min.tolist(),
            "A_tilde": self.A_tilde.tolist(),
            "D_tilde": self.D_tilde.tolist(),
            "K_tilde_upper": [v if np.isfinite(v) else "inf" for v in self.K_tilde_upper],
        }


def solve_mfe(oracle: MarketCoefficientOracle, config: ScenarioConfig,
              k_inner: int | None = None, damping: float | None = None,
              tol: float | None = None, max_iters: int | None = None,
              seed: int | None = None, n_outer: int | None = None,
              grad_paths: int | None = None, refresh_gradients: bool = False,
              initial_profile: np.ndarray | None = None) -> MeanFieldEquilibrium:
    """Damped joint iteration on the strategy map and the conditional mean.

    Gradients of log u are estimated once up front by bump-and-revalue on the
    homogeneous representative dynamics (refresh_gradients re-estimates them
    every sweep).  The strategy map is per common-noise path and per node;
    the conditional mean m is per path; both are B-measurable.
    """
    k_inner = k_inner if k_inner is not None else config.solver.n_inner
    damping = damping if damping is not None else config.solver.damping
    tol = tol if tol is not None else config.solver.tol
    max_iters = max_iters if max_iters is not None else config.solver.max_sweeps
    seed = seed if seed is not None else config.seed
    n_outer = n_outer if n_outer is not None else config.solver.n_outer
    grad_paths = grad_paths if grad_paths is not None else max(config.solver.n_paths // 4, 1000)

    K = config.steps
    n = config.n_stocks
    delta = config.delta
    grid = config.grid
    omega = damping

    def simulate(profile):
        rule = market_portfolio_rule() if profile is None else outer_profile_rule(profile)
        return simulate_mean_field(oracle, config, rule, k_inner, seed, n_outer=n_outer)

    mf = simulate(initial_profile)
    pi = mf.strategies.copy()          # (P, K+1, n)
    m = mf.m.copy()                    # (P, K+1)

    grad = grad_log_u(oracle, config, m0=m.mean(axis=0), n_paths=grad_paths, seed=seed)

    ee_c = np.exp(mf.c_draws).mean(axis=1)                       # (P,)
    ee_cv = (np.exp(mf.c_draws) / mf.v0_draws).mean(axis=1)      # (P,)

    residual_m = residual_m_abs = residual_phi = float("inf")
    converged_m = converged_phi = False
    iterations = 0

    u_hat_rev = grad.u_base.p[-1] / grad.u_base.p   # path-refreshed u-hat(T - t_k)
    for sweep in range(max_iters):
        mf = simulate(pi)
        if refresh_gradients and sweep > 0:
            grad = grad_log_u(oracle, config, m0=m.mean(axis=0), n_paths=grad_paths, seed=seed)
            u_hat_rev = grad.u_base.p[-1] / grad.u_base.p
        vol_dlm = estimate_vol_dlm(mf, config.dt)
        pi_star = np.clip(_pi_star_profile(oracle, config, mf, grad, u_hat_rev, ee_c, ee_cv, vol_dlm),
                          -STRATEGY_CLIP, STRATEGY_CLIP)
        residual_phi = float(np.max(np.mean(np.abs(pi_star - pi), axis=0)))
        residual_m_abs = float(np.max(np.mean(np.abs(mf.m - m), axis=0)))
        residual_m = float(np.max(np.mean(np.abs(mf.m - m), axis=0) / (1.0 + np.abs(m.mean(axis=0)))))
        converged_phi = residual_phi <= tol
        converged_m = residual_m <= tol
        iterations = sweep + 1
        if converged_phi and converged_m:
            break
        pi = np.clip((1.0 - omega) * pi + omega * pi_star, -STRATEGY_CLIP, STRATEGY_CLIP)
        m = (1.0 - omega) * m + omega * mf.m

    # Certificate: an independent re-simulation under the returned map.
    mf_final = simulate(pi)
    consistency_gap = float(np.max(np.mean(np.abs(mf_final.m - m), axis=0)))
    inner_se = float(np.mean(mf_final.inner[:, :, -1].std(axis=1, ddof=1)) / math.sqrt(k_inner))

    # Representative optimal proportion.
    vb0 = delta * mf_final.X[:, 0].sum(axis=1) + (1.0 - delta) * mf_final.m[:, 0]
    vbT = delta * mf_final.X[:, -1].sum(axis=1) + (1.0 - delta) * mf_final.m[:, -1]
    vals = ee_c * vbT * mf_final.L[:, -1] / vb0
    u = float(vals.mean())
    u_se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0

    # Contraction statistics per node (cross-path means reported).
    ee_cu = ee_cv[:, None] * u_hat_rev[None, :]           # E[e^c u/v0 | B] per (p, k)
    dm_rev = ((grad.profile_m * grad.u_base.p)[::-1])     # D_m u-hat at horizon T - t_k
    ee_cdu = ee_cv[:, None] * dm_rev[None, :]
    A_t, D_t, K_t = contraction_region_mf(ee_cu, ee_cdu, delta)

    vol_final = estimate_vol_dlm(mf_final, config.dt)
    return MeanFieldEquilibrium(
        grid=grid, m_path=m, Z_path=mf_final.Z, u=u, u_se=u_se,
        strategy_path=pi.mean(axis=0), strategy_paths=pi,
        strategy_sum=pi.mean(axis=0).sum(axis=1),
        strategy_min=pi.mean(axis=0).min(axis=1),
        residual_m=residual_m, residual_m_abs=residual_m_abs, residual_phi=residual_phi,
        converged_m=converged_m, converged_phi=converged_phi,
        iterations=iterations,
        A_tilde=A_t.mean(axis=0), D_tilde=D_t.mean(axis=0),
        K_tilde_upper=K_t.mean(axis=0),
        consistency_gap=consistency_gap, inner_se=inner_se, grad=grad, vol_dlm=vol_final,
    )
