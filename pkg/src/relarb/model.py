"""Domain types, scenario configuration/validation, and market-coefficient oracles.

A market is described by an immutable MarketCoefficientOracle exposing the
relative drift beta, relative volatility sigma (alpha = sigma sigma'), and the
invested-capital coefficients gamma, tau (psi = tau tau').  Two markets are
built in: a constant-coefficient market and a volatility-stabilized market in
which per-stock variance scales with the price level (small stocks are more
volatile), the classic setting where relative arbitrage exists.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, SingularMarketError
from .rng import substream

SCHEMA_VERSION = 1

# Lower floor applied to market weights and invested capital inside the
# volatility-stabilized drift, keeping simulation finite without touching
# interior dynamics.
VSM_FLOOR = 1e-12

SIMPLEX_TOL = 1e-9


# ---------------------------------------------------------------------------
# Simplex weights and market portfolio
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    """Portfolio proportions over n stocks.

    Weights may dip below zero by at most `tol`; the sum must be 1 within
    `tol`.  With strict=True any violation raises instead.
    """

    w: np.ndarray
    tol: float = SIMPLEX_TOL

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1:
            raise DomainError("weights must be a vector")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite")
        if np.any(w < -self.tol):
            raise DomainError(f"negative weight beyond tolerance: min={w.min():.3e}")
        s = float(w.sum())
        if abs(s - 1.0) > self.tol:
            raise DomainError(f"weights sum to {s!r}, not 1")

    @property
    def n(self) -> int:
        return self.w.shape[0]


def market_weights(x: Sequence[float] | np.ndarray) -> SimplexWeights:
    """Market portfolio: w_i = x_i / sum(x).  Requires strictly positive prices."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("price vector must be non-empty and one-dimensional")
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("market weights need strictly positive prices")
    return SimplexWeights(x / x.sum())


# ---------------------------------------------------------------------------
# Measure summaries passed to coefficient evaluators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasureState:
    """Summary of the wealth/strategy measure seen by coefficient evaluators.

    y : mean invested capital per stock (alias Z in the mean-field regime),
        shape (..., n).
    m : mean wealth statistic, scalar or shape (...,).  May be None for
        measure-independent oracles.
    atoms : optional raw atoms for full-measure oracles.
    """

    y: np.ndarray | None = None
    m: float | np.ndarray | None = None
    atoms: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Market-coefficient oracle
# ---------------------------------------------------------------------------

Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class MarketCoefficientOracle:
    """Evaluates beta, sigma, gamma, tau (hence alpha, psi, theta, lambda).

    All evaluators are vectorized over a leading batch axis: x has shape
    (..., n), y (..., n), m (...,).  sigma/tau return (..., n, n) and must be
    invertible wherever the deflator is evaluated.  Instances are immutable
    and safe to share across concurrent evaluations.
    """

    name: str
    beta: Evaluator                     # (t, x, meas) -> (..., n) relative drift
    sigma: Evaluator                    # (t, x, meas) -> (..., n, n) relative volatility
    gamma: Evaluator                    # (t, x, y) -> (..., n)
    tau: Evaluator                      # (t, x, y) -> (..., n, n)
    time_homogeneous: bool = True
    measure_dependence: str = "none"    # none | mean-invested | full-measure
    has_y_dynamics: bool = False        # False means gamma = 0, tau = 0 identically
    # Optional closed forms (used for speed and exactness when present).
    alpha_diag: Optional[Evaluator] = None   # (t, x, meas) -> (..., n) diag of sigma sigma'
    sigma_diag: Optional[Evaluator] = None
    tau_diag: Optional[Evaluator] = None
    theta: Optional[Evaluator] = None        # (t, x, meas) -> (..., n), solves sigma theta = beta
    lam: Optional[Evaluator] = None          # (t, x, y) -> (..., n), solves tau lam = gamma
    a_div: Optional[Evaluator] = None        # (x, y) -> (..., n): sum_j D_j a_ij
    psi_div: Optional[Evaluator] = None      # (x, y) -> (..., n): sum_j D_j psi_ij
    H: Optional[Callable] = None
    I: Optional[Callable] = None
    grad_H: Optional[Callable] = None
    grad_I: Optional[Callable] = None
    cond_threshold: float = 1e12

    # -- derived quantities -------------------------------------------------

    def alpha(self, t, x, meas) -> np.ndarray:
        """Relative covariance sigma sigma', shape (..., n, n)."""
        s = self.sigma(t, x, meas)
        return s @ np.swapaxes(s, -1, -2)

    def a_matrix(self, t, x, meas) -> np.ndarray:
        """Absolute covariance a_ij = x_i x_j alpha_ij of the price increments."""
        al = self.alpha(t, x, meas)
        x = np.asarray(x, dtype=np.float64)
        return al * x[..., :, None] * x[..., None, :]

    def psi_matrix(self, t, x, y) -> np.ndarray:
        tv = self.tau(t, x, y)
        return tv @ np.swapaxes(tv, -1, -2)

    def theta_of(self, t, x, meas) -> np.ndarray:
        """Market price of risk of the stock block: sigma theta = beta."""
        if self.theta is not None:
            return self.theta(t, x, meas)
        s = self.sigma(t, x, meas)
        b = self.beta(t, x, meas)
        _check_conditioning(s, self.cond_threshold, "sigma")
        return np.linalg.solve(s, b[..., None])[..., 0]

    def lam_of(self, t, x, y) -> np.ndarray:
        """Price of risk of the invested-capital block: tau lam = gamma; 0 when absent."""
        x = np.asarray(x, dtype=np.float64)
        if not self.has_y_dynamics:
            return np.zeros(x.shape, dtype=np.float64)
        if self.lam is not None:
            return self.lam(t, x, y)
        tv = self.tau(t, x, y)
        g = self.gamma(t, x, y)
        _check_conditioning(tv, self.cond_threshold, "tau")
        return np.linalg.solve(tv, g[..., None])[..., 0]


def _check_conditioning(mat: np.ndarray, threshold: float, label: str):
    cond = np.linalg.cond(mat)
    if not np.all(np.isfinite(cond)) or np.any(cond > threshold):
        raise SingularMarketError(f"{label} is singular or ill-conditioned (cond > {threshold:g})")


def oracle_selfcheck(oracle: MarketCoefficientOracle, points: np.ndarray,
                     y_points: np.ndarray | None = None, m: float = 1.0,
                     tol: float = 1e-8) -> dict:
    """Evaluate the oracle invariants at sample points.

    Checks sigma conditioning everywhere and, when H/I are supplied, the
    potential identities b = a.DH and gamma = psi.DI.  Returns max residuals.
    """
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(y_points, dtype=np.float64) if y_points is not None else np.full_like(x, m)
    meas = MeasureState(y=y, m=np.full(x.shape[:-1], m))
    s = oracle.sigma(0.0, x, meas)
    _check_conditioning(s, oracle.cond_threshold, "sigma")
    # Degeneracy on a face shows up in the absolute covariance a = (xs)(xs)'
    # even when the relative volatility stays bounded by internal floors.
    _check_conditioning(oracle.a_matrix(0.0, x, meas), oracle.cond_threshold, "a")
    out = {"sigma_cond_max": float(np.max(np.linalg.cond(s)))}
    if oracle.H is not None and oracle.grad_H is not None:
        b = x * oracle.beta(0.0, x, meas)
        a = oracle.a_matrix(0.0, x, meas)
        dh = oracle.grad_H(x)
        out["potential_residual_x"] = float(np.max(np.abs(b - np.einsum("...ij,...j->...i", a, dh))))
        if out["potential_residual_x"] > tol:
            raise DomainError("drift potential identity b = a.DH violated")
    if oracle.I is not None and oracle.grad_I is not None and oracle.has_y_dynamics:
        g = oracle.gamma(0.0, x, y)
        psi = oracle.psi_matrix(0.0, x, y)
        di = oracle.grad_I(y)
        out["potential_residual_y"] = float(np.max(np.abs(g - np.einsum("...ij,...j->...i", psi, di))))
        if out["potential_residual_y"] > tol:
            raise DomainError("invested-capital potential identity gamma = psi.DI violated")
    return out


# ---------------------------------------------------------------------------
# Built-in markets
# ---------------------------------------------------------------------------


def builtin_market(kind: str, **params) -> MarketCoefficientOracle:
    """Construct one of the built-in markets.

    kind="constant": constant relative drift/volatility.  Required: beta
    (vector), sigma (scalar or matrix).  Optional constant gamma, tau.
    kind="volatility_stabilized": beta_i = (1+zeta) y_i / (2 mw_i),
    a_ij = x_i 1{i=j}, gamma = beta, psi_ij = y_i 1{i=j}, with sigma and tau
    the diagonal square roots.  Required: zeta >= 0 and n.
    """
    if kind == "constant":
        return _constant_market(**params)
    if kind == "volatility_stabilized":
        return _vsm_market(**params)
    raise DomainError(f"unknown builtin market kind: {kind!r}")


def _as_matrix(v, n: int, label: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        return np.eye(n) * float(arr)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise ConfigError(f"{label} diagonal must have length {n}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ConfigError(f"{label} must be {n}x{n}")
    return arr


def _constant_market(beta, sigma, gamma=None, tau=None) -> MarketCoefficientOracle:
    beta = np.asarray(beta, dtype=np.float64)
    n = beta.shape[0]
    sig = _as_matrix(sigma, n, "sigma")
    gam = np.zeros(n) if gamma is None else np.asarray(gamma, dtype=np.float64)
    tav = np.zeros((n, n)) if tau is None else _as_matrix(tau, n, "tau")
    has_y = bool(np.any(gam != 0.0) or np.any(tav != 0.0))
    alpha = sig @ sig.T
    sig_invertible = np.linalg.matrix_rank(sig) == n

    if sig_invertible:
        theta_const = np.linalg.solve(sig, beta)
    elif np.all(beta == 0.0):
        theta_const = np.zeros(n)   # riskless-and-driftless market: no price of risk
    else:
        theta_const = None
    lam_const = None
    if has_y:
        if np.linalg.matrix_rank(tav) == n:
            lam_const = np.linalg.solve(tav, gam)
        elif np.all(gam == 0.0):
            lam_const = np.zeros(n)

    def _broadcast_vec(vec, x):
        return np.broadcast_to(vec, np.asarray(x).shape).copy()

    def _broadcast_mat(mat, x):
        shape = np.asarray(x).shape[:-1] + (n, n)
        return np.broadcast_to(mat, shape).copy()

    def beta_fn(t, x, meas):
        return _broadcast_vec(beta, x)

    def sigma_fn(t, x, meas):
        return _broadcast_mat(sig, x)

    def gamma_fn(t, x, y):
        return _broadcast_vec(gam, x)

    def tau_fn(t, x, y):
        return _broadcast_mat(tav, x)

    def alpha_diag_fn(t, x, meas):
        return _broadcast_vec(np.diag(alpha), x)

    theta_fn = (lambda t, x, meas: _broadcast_vec(theta_const, x)) if theta_const is not None else None
    lam_fn = (lambda t, x, y: _broadcast_vec(lam_const, x)) if lam_const is not None else None

    def a_div_fn(x, y):
        # a_ij = x_i x_j alpha_ij: sum_j D_j a_ij = x_i (alpha_ii + sum_j alpha_ij)
        x = np.asarray(x, dtype=np.float64)
        return x * (np.diag(alpha) + alpha.sum(axis=1))

    def psi_div_fn(x, y):
        return np.zeros(np.asarray(x).shape, dtype=np.float64)

    # H linear in log prices reproduces the drift: h solves alpha h = beta.
    H = grad_H = None
    if sig_invertible:
        h = np.linalg.solve(alpha, beta)

        def H(x):  # noqa: E731 shadowing by design
            return float(np.dot(h, np.log(np.asarray(x, dtype=np.float64))))

        def grad_H(x):
            return h / np.asarray(x, dtype=np.float64)

    I = grad_I = None
    if has_y and lam_const is not None and np.linalg.matrix_rank(tav @ tav.T) == n:
        di = np.linalg.solve(tav @ tav.T, gam)

        def I(y):
            return float(np.dot(di, np.asarray(y, dtype=np.float64)))

        def grad_I(y):
            return np.broadcast_to(di, np.asarray(y).shape).copy()

    diag_sigma = np.allclose(sig, np.diag(np.diag(sig)))
    return MarketCoefficientOracle(
        name="constant",
        beta=beta_fn, sigma=sigma_fn, gamma=gamma_fn, tau=tau_fn,
        time_homogeneous=True, measure_dependence="none", has_y_dynamics=has_y,
        alpha_diag=alpha_diag_fn if diag_sigma else None,
        sigma_diag=(lambda t, x, meas: _broadcast_vec(np.diag(sig), x)) if diag_sigma else None,
        tau_diag=(lambda t, x, y: _broadcast_vec(np.diag(tav), x)) if np.allclose(tav, np.diag(np.diag(tav))) else None,
        theta=theta_fn, lam=lam_fn, a_div=a_div_fn, psi_div=psi_div_fn,
        H=H, I=I, grad_H=grad_H, grad_I=grad_I,
    )


def _vsm_market(zeta: float, n: int | None = None) -> MarketCoefficientOracle:
    if zeta < 0:
        raise ConfigError("zeta must be nonnegative")
    zf = 1.0 + float(zeta)

    def _floored_price(x):
        # Price of zero makes the market weight vanish: a genuine singularity.
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0.0):
            raise SingularMarketError("volatility-stabilized market queried at a vanishing market weight")
        return np.maximum(x, VSM_FLOOR)

    def _floored_capital(y):
        # Invested capital may touch 0 (clamped Euler paths); floor it.
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0.0):
            raise SingularMarketError("volatility-stabilized market queried at negative invested capital")
        return np.maximum(y, VSM_FLOOR)

    def _mw(x):
        x = _floored_price(x)
        return np.maximum(x / x.sum(axis=-1, keepdims=True), VSM_FLOOR)

    def beta_fn(t, x, meas):
        if meas.y is None:
            raise DomainError("volatility-stabilized beta requires the mean-invested measure summary")
        return zf * _floored_capital(meas.y) / (2.0 * _mw(x))

    def sigma_fn(t, x, meas):
        d = 1.0 / np.sqrt(_floored_price(x))
        return _diag_embed(d)

    def gamma_fn(t, x, y):
        return zf * _floored_capital(y) / (2.0 * _mw(x))

    def tau_fn(t, x, y):
        return _diag_embed(np.sqrt(_floored_capital(y)))

    def alpha_diag_fn(t, x, meas):
        return 1.0 / _floored_price(x)

    def sigma_diag_fn(t, x, meas):
        return 1.0 / np.sqrt(_floored_price(x))

    def tau_diag_fn(t, x, y):
        return np.sqrt(_floored_capital(y))

    def theta_fn(t, x, meas):
        # sigma is diag(x^{-1/2}); theta = sqrt(x) * beta
        return np.sqrt(_floored_price(x)) * beta_fn(t, x, meas)

    def lam_fn(t, x, y):
        return zf * np.sqrt(_floored_capital(y)) / (2.0 * _mw(x))

    def a_div_fn(x, y):
        # a_ii = x_i, so sum_j D_j a_ij = 1 for every i, valid up to the face.
        return np.ones(np.asarray(x).shape, dtype=np.float64)

    def psi_div_fn(x, y):
        return np.ones(np.asarray(x).shape, dtype=np.float64)

    return MarketCoefficientOracle(
        name="volatility_stabilized",
        beta=beta_fn, sigma=sigma_fn, gamma=gamma_fn, tau=tau_fn,
        time_homogeneous=True, measure_dependence="mean-invested", has_y_dynamics=True,
        alpha_diag=alpha_diag_fn, sigma_diag=sigma_diag_fn, tau_diag=tau_diag_fn,
        theta=theta_fn, lam=lam_fn, a_div=a_div_fn, psi_div=psi_div_fn,
    )


def _diag_embed(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    out = np.zeros(d.shape + (d.shape[-1],), dtype=np.float64)
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


# ---------------------------------------------------------------------------
# Preference / initial-wealth sampling laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingLaw:
    """i.i.d. sampling law for investor-level quantities (preferences, wealth)."""

    kind: str          # uniform | normal | point
    a: float = 0.0     # uniform low / normal mean / point value
    b: float = 0.0     # uniform high / normal std

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size=size)
        if self.kind == "normal":
            return rng.normal(self.a, self.b, size=size)
        if self.kind == "point":
            return np.full(size, self.a, dtype=np.float64)
        raise ConfigError(f"unknown sampling law: {self.kind!r}")

    def to_dict(self) -> dict:
        return {"law": self.kind, "a": self.a, "b": self.b}


# ---------------------------------------------------------------------------
# Solver settings and scenario configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances, damping and path counts shared by the solvers."""

    n_paths: int = 20000
    n_inner: int = 64
    n_outer: int = 64
    damping: float = 0.5
    tol: float = 1e-6
    max_sweeps: int = 200
    bump_abs: float = 1e-4
    bump_rel: float = 5e-3
    strict_simplex: bool = False
    ccond_literal: bool = False
    cdf_std_normalized: bool = False
    memory_budget: int = 50_000_000

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths, "n_inner": self.n_inner, "n_outer": self.n_outer,
            "damping": self.damping, "tol": self.tol, "max_sweeps": self.max_sweeps,
            "bump_abs": self.bump_abs, "bump_rel": self.bump_rel,
            "strict_simplex": self.strict_simplex, "ccond_literal": self.ccond_literal,
            "cdf_std_normalized": self.cdf_std_normalized, "memory_budget": self.memory_budget,
        }


_SOLVER_KEYS = set(SolverSettings().to_dict().keys())


@dataclass(frozen=True)
class ScenarioConfig:
    """Immutable scenario: market size, horizon, investors, seed and solver knobs.

    c and v0 are per-investor tuples; pass c_law/v0_law to record the sampling
    law they were drawn from (used by the mean-field inner sampler).
    """

    n_stocks: int
    n_investors: int
    horizon: float
    steps: int
    delta: float
    c: tuple[float, ...]
    v0: tuple[float, ...]
    x0: tuple[float, ...]
    y0: tuple[float, ...]
    seed: int
    solver: SolverSettings = field(default_factory=SolverSettings)
    c_law: SamplingLaw | None = None
    v0_law: SamplingLaw | None = None

    def __post_init__(self):
        if self.n_stocks < 1 or self.n_investors < 1 or self.steps < 1:
            raise ConfigError("n_stocks, n_investors and steps must be positive integers")
        if not (self.horizon > 0):
            raise ConfigError("horizon must be positive")
        if not (0.0 <= self.delta <= 1.0):
            raise ConfigError("delta must lie in [0, 1]")
        c = tuple(float(v) for v in np.atleast_1d(self.c))
        v0 = tuple(float(v) for v in np.atleast_1d(self.v0))
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        y0 = tuple(float(v) for v in np.atleast_1d(self.y0))
        if len(v0) == 1 and self.n_investors > 1:
            v0 = v0 * self.n_investors
        if len(c) == 1 and self.n_investors > 1:
            c = c * self.n_investors
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y0", y0)
        if len(self.c) != self.n_investors or len(self.v0) != self.n_investors:
            raise ConfigError("c and v0 must have one entry per investor")
        if len(self.x0) != self.n_stocks or len(self.y0) != self.n_stocks:
            raise ConfigError("x0 and y0 must have one entry per stock")
        if any(v <= 0 for v in self.v0) or any(v <= 0 for v in self.x0):
            raise ConfigError("initial wealths and prices must be strictly positive")
        if any(v < 0 for v in self.y0):
            raise ConfigError("initial invested capital must be nonnegative")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer (explicit, no implicit entropy)")
        load = self.steps * self.n_stocks * self.n_investors
        if load > self.solver.memory_budget:
            raise ConfigError(
                f"steps*n_stocks*n_investors = {load} exceeds the memory budget "
                f"{self.solver.memory_budget}")

    # -- convenience views --------------------------------------------------

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def x0_array(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=np.float64)

    def y0_array(self) -> np.ndarray:
        return np.asarray(self.y0, dtype=np.float64)

    def v0_array(self) -> np.ndarray:
        return np.asarray(self.v0, dtype=np.float64)

    def c_array(self) -> np.ndarray:
        return np.asarray(self.c, dtype=np.float64)

    def with_investors(self, c, v0, n_investors: int | None = None) -> "ScenarioConfig":
        n_inv = n_investors if n_investors is not None else len(np.atleast_1d(c))
        return replace(self, n_investors=n_inv, c=tuple(np.atleast_1d(c)), v0=tuple(np.atleast_1d(v0)))

    def draw_investors(self, n_investors: int, stream_index: int = 0) -> "ScenarioConfig":
        """Fresh i.i.d. (c, v0) draws from the recorded laws (point mass fallback)."""
        rng = substream(self.seed, "investor-draws", stream_index)
        c_law = self.c_law or SamplingLaw("point", self.c[0])
        v_law = self.v0_law or SamplingLaw("point", self.v0[0])
        c = c_law.sample(rng, n_investors)
        v0 = np.abs(v_law.sample(rng, n_investors))
        v0 = np.maximum(v0, 1e-8)
        return self.with_investors(c, v0, n_investors)

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "n": self.n_stocks, "N": self.n_investors,
            "T": self.horizon, "steps": self.steps, "delta": self.delta,
            "c": list(self.c), "v0": list(self.v0),
            "x0": list(self.x0), "y0": list(self.y0),
            "seed": self.seed, "solver": self.solver.to_dict(),
        }
        if self.c_law is not None:
            d["c_law"] = self.c_law.to_dict()
        if self.v0_law is not None:
            d["v0_law"] = self.v0_law.to_dict()
        return d


# ---------------------------------------------------------------------------
# Scenario JSON schema
# ---------------------------------------------------------------------------

_TOP_KEYS = {"schema_version", "n", "N", "T", "steps", "delta", "c", "v0",
             "x0", "y0", "seed", "solver", "market", "c_law", "v0_law"}
_MARKET_KEYS = {"kind", "beta", "sigma", "gamma", "tau", "zeta"}
_LAW_KEYS = {"law", "a", "b"}


def _parse_law(obj, label: str) -> SamplingLaw:
    unknown = set(obj) - _LAW_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in {label}: {sorted(unknown)}")
    return SamplingLaw(kind=str(obj["law"]), a=float(obj.get("a", 0.0)), b=float(obj.get("b", 0.0)))


def scenario_from_dict(doc: dict) -> tuple[ScenarioConfig, MarketCoefficientOracle]:
    """Parse a scenario document (strict: unknown keys rejected)."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    if "schema_version" not in doc:
        raise ConfigError("schema_version is mandatory")
    if int(doc["schema_version"]) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("n", "N", "T", "steps", "delta", "x0", "seed", "market"):
        if key not in doc:
            raise ConfigError(f"missing scenario key: {key!r}")

    n = int(doc["n"])
    n_inv = int(doc["N"])
    seed = int(doc["seed"])

    c_law = _parse_law(doc["c_law"], "c_law") if "c_law" in doc else None
    v0_law = _parse_law(doc["v0_law"], "v0_law") if "v0_law" in doc else None

    c_spec = doc.get("c", 0.0)
    if isinstance(c_spec, dict):
        c_law = _parse_law(c_spec, "c")
        c = c_law.sample(substream(seed, "preferences"), n_inv)
    else:
        c = np.atleast_1d(np.asarray(c_spec, dtype=np.float64))

    v_spec = doc.get("v0", 1.0)
    if isinstance(v_spec, dict):
        v0_law = _parse_law(v_spec, "v0")
        v0 = np.maximum(np.abs(v0_law.sample(substream(seed, "initial-wealth"), n_inv)), 1e-8)
    else:
        v0 = np.atleast_1d(np.asarray(v_spec, dtype=np.float64))

    x0 = np.asarray(doc["x0"], dtype=np.float64)
    y0 = np.asarray(doc.get("y0", np.full(n, float(np.mean(v0)) / n)), dtype=np.float64)

    solver_doc = doc.get("solver", {})
    unknown = set(solver_doc) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    solver = SolverSettings(**solver_doc)

    config = ScenarioConfig(
        n_stocks=n, n_investors=n_inv, horizon=float(doc["T"]), steps=int(doc["steps"]),
        delta=float(doc["delta"]), c=tuple(c), v0=tuple(v0), x0=tuple(x0), y0=tuple(y0),
        seed=seed, solver=solver, c_law=c_law, v0_law=v0_law,
    )

    mkt = dict(doc["market"])
    unknown = set(mkt) - _MARKET_KEYS
    if unknown:
        raise ConfigError(f"unknown market keys: {sorted(unknown)}")
    kind = mkt.pop("kind", None)
    if kind == "constant":
        oracle = builtin_market("constant", **{k: v for k, v in mkt.items() if k in ("beta", "sigma", "gamma", "tau")})
        if oracle.beta(0.0, config.x0_array(), MeasureState()).shape[-1] != n:
            raise ConfigError("market beta dimension does not match n")
    elif kind == "volatility_stabilized":
        oracle = builtin_market("volatility_stabilized", zeta=float(mkt.get("zeta", 0.0)), n=n)
    else:
        raise ConfigError(f"unknown market kind: {kind!r}")
    return config, oracle


def scenario_to_dict(config: ScenarioConfig, market: dict | None = None) -> dict:
    doc = config.to_dict()
    if market is not None:
        doc["market"] = market
    return doc


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    hard: bool
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Feasibility verdicts for a scenario.  feasible = all hard checks pass."""

    feasible: bool
    checks: tuple[CheckResult, ...]

    @property
    def messages(self) -> tuple[str, ...]:
        return tuple(c.message for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "checks": [
                {"name": c.name, "passed": c.passed, "hard": c.hard, "message": c.message}
                for c in self.checks
            ],
        }


def preference_condition_lhs(config: ScenarioConfig, literal: bool | None = None) -> float:
    """Left-hand side of the preference feasibility inequality (must be < 1).

    Default is the 1/N-normalized form (1-delta) (1/N) sum_l e^{c_l}/v_l;
    literal=True drops the 1/N factor.
    """
    if literal is None:
        literal = config.solver.ccond_literal
    s = float(np.sum(np.exp(config.c_array()) / config.v0_array()))
    if not literal:
        s /= config.n_investors
    return (1.0 - config.delta) * s


def validate_scenario(config: ScenarioConfig, oracle: MarketCoefficientOracle | None = None) -> ValidationReport:
    """Run feasibility and advisory checks.  Pure: never mutates the config."""
    checks: list[CheckResult] = []

    lhs = preference_condition_lhs(config)
    form = "literal" if config.solver.ccond_literal else "1/N-normalized"
    checks.append(CheckResult(
        name="preference_sum",
        passed=bool(lhs < 1.0),
        hard=True,
        message=(f"preference condition ({form}): (1-delta) * mean(e^c / v0) = {lhs:.6g} "
                 f"{'<' if lhs < 1.0 else '>='} 1"),
    ))

    # Advisory: c_l >= log v_l - log(delta*v + 1 - delta) marks the regime in
    # which a martingale deflator rules out relative arbitrage.  The total
    # initial capitalization X(0) stands in for the aggregate wealth symbol.
    v_total = float(np.sum(config.x0_array()))
    bound = np.log(config.v0_array()) - np.log(config.delta * v_total + 1.0 - config.delta)
    in_regime = bool(np.all(config.c_array() >= bound))
    checks.append(CheckResult(
        name="no_arbitrage_advisory",
        passed=in_regime,
        hard=False,
        message=("martingale no-arbitrage regime flag: c_l >= log v_l - log(delta*v + 1 - delta) "
                 f"with v read as total initial capitalization {v_total:.6g}; "
                 f"{'holds' if in_regime else 'does not hold'} for all investors"),
    ))

    mw = market_weights(config.x0_array()).w
    checks.append(CheckResult(
        name="diversity_diagnostic",
        passed=bool(mw.max() < 1.0),
        hard=False,
        message=f"max market weight at t=0 is {mw.max():.6g} (diversity headroom {1.0 - mw.max():.6g})",
    ))

    if oracle is not None:
        meas = MeasureState(y=config.y0_array(), m=1.0)
        alpha = oracle.alpha(0.0, config.x0_array(), meas)
        eig = np.linalg.eigvalsh(alpha)
        checks.append(CheckResult(
            name="nondegeneracy_diagnostic",
            passed=bool(eig.min() > 0.0),
            hard=False,
            message=f"alpha eigenvalues at t=0 in [{eig.min():.6g}, {eig.max():.6g}]",
        ))

    feasible = all(c.passed for c in checks if c.hard)
    return ValidationReport(feasible=feasible, checks=tuple(checks))
