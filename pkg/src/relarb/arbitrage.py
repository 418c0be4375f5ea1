"""Optimal initial proportion u, its gradients, the generator, and the Fichera test.

u is the smallest initial fraction of the benchmark capital from which the
target e^c * benchmark(T) can be matched.  Its stochastic representation
u = E[e^c Vbench(T) L(T)] / Vbench(0) identifies the minimal nonnegative
solution of the associated Cauchy problem, so the Monte Carlo estimator is
the authority; the explicit finite-difference solver is validated against it
on nondegenerate markets.  Existence of relative arbitrage is decided by the
sign of the Fichera drift on the faces of the nonnegative orthant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import (StrategyRule, benchmark_path, market_portfolio_rule,
                     simulate_deflator, simulate_n_particle)
from .errors import DomainError
from .model import MarketCoefficientOracle, MeasureState, ScenarioConfig
from .rng import CHUNK, chunk_ranges

FACE_EPS = 1e-12


# ---------------------------------------------------------------------------
# Monte Carlo estimation of u over the whole horizon ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UProfile:
    """Horizon profile of the deflated-benchmark mean from one MC run.

    p[k] estimates u-hat at horizon t_k (preference factor e^c excluded),
    i.e. E[Vbench(t_k) L(t_k)] / Vbench(0).  Per-node means of the state are
    kept for the fixed-point solvers.
    """

    grid: np.ndarray
    p: np.ndarray          # (K+1,)
    p_se: np.ndarray       # (K+1,)
    x_total: np.ndarray    # (K+1,) mean total capitalization
    x_vec: np.ndarray      # (K+1, n) mean stock prices
    v_mean: np.ndarray     # (K+1, N) mean wealths
    y_mean: np.ndarray     # (K+1, n) mean invested capital
    peer_mean: np.ndarray  # (K+1,) mean peer average
    n_paths: int

    def at_horizon(self, tau: float) -> float:
        return float(np.interp(tau, self.grid, self.p))


def u_profile_mc(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                 n_paths: int, seed: int | None = None,
                 strategies: StrategyRule | None = None,
                 frozen_m: np.ndarray | float | None = None,
                 y_mode: str = "endogenous") -> UProfile:
    """Chunked MC pass returning the u-hat profile over all horizons.

    frozen_m freezes the peer-average leg of the benchmark at a given path
    (scalar means a constant path); None uses the simulated peer average.
    """
    if seed is None:
        seed = config.seed
    if strategies is None:
        strategies = market_portfolio_rule()
    K = config.steps
    n, N = config.n_stocks, config.n_investors

    m_path = None
    if frozen_m is not None:
        m_path = np.broadcast_to(np.asarray(frozen_m, dtype=np.float64), (K + 1,)).astype(np.float64)

    sums = {
        "g": np.zeros(K + 1), "g2": np.zeros(K + 1),
        "xt": np.zeros(K + 1), "xv": np.zeros((K + 1, n)),
        "v": np.zeros((K + 1, N)), "y": np.zeros((K + 1, n)), "peer": np.zeros(K + 1),
    }
    total = 0
    for start, count in chunk_ranges(n_paths):
        paths = simulate_n_particle(oracle, config, strategies, seed, n_paths=count,
                                    record_strategies=False, y_mode=y_mode, path_offset=start)
        defl = simulate_deflator(paths, oracle, config)
        bench = benchmark_path(paths, config, frozen_m=m_path)
        g = bench.Vbench * defl.L / bench.Vbench[:, 0][:, None]   # (count, K+1)
        sums["g"] += g.sum(axis=0)
        sums["g2"] += (g * g).sum(axis=0)
        sums["xt"] += bench.market_total.sum(axis=0)
        sums["xv"] += paths.X.sum(axis=0)
        sums["v"] += paths.V.sum(axis=0)
        sums["y"] += paths.Y.sum(axis=0)
        sums["peer"] += bench.peer_average.sum(axis=0)
        total += count

    p = sums["g"] / total
    var = np.maximum(sums["g2"] / total - p * p, 0.0)
    p_se = np.sqrt(var / max(total - 1, 1))
    return UProfile(grid=config.grid, p=p, p_se=p_se,
                    x_total=sums["xt"] / total, x_vec=sums["xv"] / total,
                    v_mean=sums["v"] / total, y_mean=sums["y"] / total,
                    peer_mean=sums["peer"] / total, n_paths=total)


@dataclass(frozen=True, eq=False)
class ArbitrageEstimate:
    """Monte Carlo estimate of the optimal initial proportion for one investor."""

    u_hat: float
    std_err: float
    n_paths: int
    c: float
    normalized: bool = False          # True: u_hat excludes the e^c factor
    grad_x: np.ndarray | None = None  # gradients of log u (set by grad_log_u)
    grad_y: np.ndarray | None = None
    grad_m: float | None = None
    low_paths: bool = False

    def __post_init__(self):
        if not (self.u_hat > 0.0):
            raise DomainError("u_hat must be positive")
        if self.std_err < 0.0:
            raise DomainError("std_err must be nonnegative")

    @property
    def u_tilde(self) -> float:
        """Value including the preference factor e^c."""
        return self.u_hat if not self.normalized else self.u_hat * math.exp(self.c)

    @property
    def u_normalized(self) -> float:
        """Value with the e^c factor removed (equals 1 at horizon zero)."""
        return self.u_hat * math.exp(-self.c) if not self.normalized else self.u_hat


def _resolve_c(config: ScenarioConfig, investor) -> float:
    if isinstance(investor, (int, np.integer)):
        return float(config.c[int(investor)])
    return float(investor)


def estimate_u_mc(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                  investor=0, n_paths: int | None = None, seed: int | None = None,
                  strategies: StrategyRule | None = None,
                  frozen_m: np.ndarray | float | None = None,
                  y_mode: str = "endogenous", normalized: bool = False) -> ArbitrageEstimate:
    """Feynman-Kac Monte Carlo estimate u = E[e^c Vbench(T) L(T)] / Vbench(0).

    `investor` is an index into config.c or an explicit preference value.
    """
    if n_paths is None:
        n_paths = config.solver.n_paths
    c = _resolve_c(config, investor)
    prof = u_profile_mc(oracle, config, n_paths, seed=seed, strategies=strategies,
                        frozen_m=frozen_m, y_mode=y_mode)
    scale = 1.0 if normalized else math.exp(c)
    return ArbitrageEstimate(u_hat=scale * float(prof.p[-1]),
                             std_err=scale * float(prof.p_se[-1]),
                             n_paths=prof.n_paths, c=c, normalized=normalized,
                             low_paths=prof.n_paths < 100)


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def apply_generator(oracle: MarketCoefficientOracle, point, f, delta: float,
                    vbench0: float, h: float = 1e-4, derivatives: dict | None = None) -> float:
    """Apply the pricing generator to f at (x, y).

    A f = 1/2 sum_ij a_ij (D2_ij f + 2 delta D_i f / Vbench(0))
          + 1/2 sum_pq psi_pq D2_pq f.

    f is a callable f(x, y) evaluated on a central stencil of half-width h,
    or pass `derivatives` with keys grad_x (n,), hess_x (n, n), hess_y (n, n).
    """
    x, y = (np.asarray(v, dtype=np.float64) for v in point)
    n = x.shape[0]
    a = oracle.a_matrix(0.0, x, MeasureState(y=y, m=1.0))
    psi = oracle.psi_matrix(0.0, x, y)

    if derivatives is None:
        if h <= 0.0:
            raise DomainError("stencil half-width must be positive")
        if np.any(x - h <= 0.0) or np.any(y - h < 0.0):
            raise DomainError("stencil too small: bumped point leaves the domain")
        grad_x = np.empty(n)
        hess_x = np.empty((n, n))
        hess_y = np.empty((n, n))
        f0 = f(x, y)
        for i in range(n):
            xe = np.zeros(n); xe[i] = h
            fp, fm = f(x + xe, y), f(x - xe, y)
            grad_x[i] = (fp - fm) / (2 * h)
            hess_x[i, i] = (fp - 2 * f0 + fm) / h**2
            ye = np.zeros(n); ye[i] = h
            hess_y[i, i] = (f(x, y + ye) - 2 * f0 + f(x, y - ye)) / h**2
        for i in range(n):
            for j in range(i + 1, n):
                ei = np.zeros(n); ei[i] = h
                ej = np.zeros(n); ej[j] = h
                mixed = (f(x + ei + ej, y) - f(x + ei - ej, y)
                         - f(x - ei + ej, y) + f(x - ei - ej, y)) / (4 * h**2)
                hess_x[i, j] = hess_x[j, i] = mixed
                myij = (f(x, y + ei + ej) - f(x, y + ei - ej)
                        - f(x, y - ei + ej) + f(x, y - ei - ej)) / (4 * h**2)
                hess_y[i, j] = hess_y[j, i] = myij
    else:
        grad_x = np.asarray(derivatives["grad_x"], dtype=np.float64)
        hess_x = np.asarray(derivatives["hess_x"], dtype=np.float64)
        hess_y = np.asarray(derivatives.get("hess_y", np.zeros((n, n))), dtype=np.float64)

    second = 0.5 * float(np.sum(a * hess_x))
    first = (delta / vbench0) * float(np.sum(a.sum(axis=1) * grad_x))
    second_y = 0.5 * float(np.sum(psi * hess_y))
    return second + first + second_y


# ---------------------------------------------------------------------------
# Explicit finite-difference Cauchy solver (one stock, log-space grid)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CauchyGridSpec:
    nx: int = 129
    ny: int = 129
    box_factor: float = 8.0
    cfl: float = 0.9
    boundary: str = "outflow"        # outflow | absorbing
    dirichlet_value: float = 0.0     # used by absorbing mode on the lower faces
    sentinel_check: bool = True


@dataclass(frozen=True, eq=False)
class CauchyGrid:
    """Solution of the Cauchy problem on a (tau, log x, log y) grid for n = 1."""

    tau_grid: np.ndarray
    xi: np.ndarray             # log-x axis
    eta: np.ndarray            # log-y axis
    values: np.ndarray         # (n_tau+1, nx, ny), values[0] = e^c exactly
    c: float
    boundary: str
    cfl_ratio: float           # max stability ratio actually used
    substeps: int
    max_over_tau: np.ndarray   # grid max per tau slice (monotonicity diagnostic)
    min_value: float
    boundary_warning: bool

    def value_at(self, x: float, y: float, tau_index: int = -1) -> float:
        """Bilinear interpolation in (log x, log y)."""
        lx, ly = math.log(x), math.log(y)
        sl = self.values[tau_index]
        i = int(np.clip(np.searchsorted(self.xi, lx) - 1, 0, self.xi.size - 2))
        j = int(np.clip(np.searchsorted(self.eta, ly) - 1, 0, self.eta.size - 2))
        tx = (lx - self.xi[i]) / (self.xi[i + 1] - self.xi[i])
        ty = (ly - self.eta[j]) / (self.eta[j + 1] - self.eta[j])
        tx, ty = np.clip(tx, 0.0, 1.0), np.clip(ty, 0.0, 1.0)
        return float((1 - tx) * (1 - ty) * sl[i, j] + tx * (1 - ty) * sl[i + 1, j]
                     + (1 - tx) * ty * sl[i, j + 1] + tx * ty * sl[i + 1, j + 1])


class _FDOperator:
    """Discrete generator on the log grid, with extrapolation ghosts (outflow)."""

    def __init__(self, oracle, config, spec: CauchyGridSpec, vbench0: float):
        if config.n_stocks != 1:
            raise DomainError("the finite-difference solver is limited to one stock (two spatial dims)")
        if not oracle.time_homogeneous:
            raise DomainError("the finite-difference solver requires time-homogeneous coefficients")
        x0 = config.x0_array()[0]
        y0 = max(config.y0_array()[0], 1e-6)
        f = spec.box_factor
        self.xi = np.linspace(math.log(x0 / f), math.log(f * x0), spec.nx)
        self.eta = np.linspace(math.log(y0 / f), math.log(f * y0), spec.ny)
        self.dxi = self.xi[1] - self.xi[0]
        self.deta = self.eta[1] - self.eta[0]
        X, Y = np.meshgrid(np.exp(self.xi), np.exp(self.eta), indexing="ij")
        meas = MeasureState(y=Y[..., None], m=np.ones_like(X))
        a = oracle.a_matrix(0.0, X[..., None], meas)[..., 0, 0]
        psi = oracle.psi_matrix(0.0, X[..., None], Y[..., None])[..., 0, 0]
        # u_tau = cxx (u_xixi - u_xi) + cx u_xi + cyy (u_etaeta - u_eta)
        self.cxx = 0.5 * a / X**2
        self.cx = config.delta * a / (X * vbench0)
        self.cyy = 0.5 * psi / Y**2
        self.spec = spec

    def rate(self) -> float:
        """Max explicit-stability rate over the grid (1/time units)."""
        r = (2.0 * self.cxx / self.dxi**2 + 2.0 * self.cyy / self.deta**2
             + np.abs(self.cx - self.cxx) / self.dxi + np.abs(self.cyy) / self.deta)
        return float(r.max())

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Discrete generator with linear-extrapolation ghosts on every edge.

        The ghosts make edge second differences vanish and first differences
        one-sided, so constants are annihilated exactly.
        """
        g = np.empty((u.shape[0] + 2, u.shape[1] + 2))
        g[1:-1, 1:-1] = u
        g[0, 1:-1] = 2 * u[0] - u[1]
        g[-1, 1:-1] = 2 * u[-1] - u[-2]
        g[:, 0] = 2 * g[:, 1] - g[:, 2]
        g[:, -1] = 2 * g[:, -2] - g[:, -3]
        uxx = (g[2:, 1:-1] - 2 * u + g[:-2, 1:-1]) / self.dxi**2
        ux = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2 * self.dxi)
        uyy = (g[1:-1, 2:] - 2 * u + g[1:-1, :-2]) / self.deta**2
        uy = (g[1:-1, 2:] - g[1:-1, :-2]) / (2 * self.deta)
        return self.cxx * (uxx - ux) + self.cx * ux + self.cyy * (uyy - uy)


def solve_cauchy_fd(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                    spec: CauchyGridSpec | None = None, c: float | None = None,
                    vbench0: float | None = None) -> CauchyGrid:
    """Explicit marching in tau with sub-stepping keeping the CFL ratio <= spec.cfl.

    Outflow boundaries preserve constants, so the trivial solution u = e^c is
    reproduced exactly; minimal-solution selection on degenerate markets is
    the Monte Carlo representation's job.
    """
    spec = spec or CauchyGridSpec()
    if c is None:
        c = float(config.c[0])
    if vbench0 is None:
        vbench0 = config.delta * float(np.sum(config.x0_array())) + (1.0 - config.delta)
    op = _FDOperator(oracle, config, spec, vbench0)

    n_tau = config.steps
    dtau = config.horizon / n_tau
    rate = op.rate()
    substeps = max(1, int(math.ceil(dtau * rate / spec.cfl))) if rate > 0 else 1
    dsub = dtau / substeps
    cfl_ratio = dsub * rate

    values = np.empty((n_tau + 1, spec.nx, spec.ny))
    values[0] = math.exp(c)
    u = values[0].copy()
    sentinel = u.copy() if spec.sentinel_check else None

    for k in range(n_tau):
        for _ in range(substeps):
            u = u + dsub * op.apply(u)
            if spec.boundary == "absorbing":
                u[0, :] = spec.dirichlet_value
                u[:, 0] = spec.dirichlet_value
            if sentinel is not None:
                upd = sentinel + dsub * op.apply(sentinel)
                upd[0, :] = sentinel[0, :]
                upd[-1, :] = sentinel[-1, :]
                upd[:, 0] = sentinel[:, 0]
                upd[:, -1] = sentinel[:, -1]
                sentinel = upd
        values[k + 1] = u

    center = values[-1, spec.nx // 2, spec.ny // 2]
    boundary_warning = False
    if sentinel is not None:
        boundary_warning = abs(center - sentinel[spec.nx // 2, spec.ny // 2]) > 1e-3 * math.exp(c)

    max_over_tau = values.max(axis=(1, 2))
    return CauchyGrid(tau_grid=np.linspace(0.0, config.horizon, n_tau + 1),
                      xi=op.xi, eta=op.eta, values=values, c=c, boundary=spec.boundary,
                      cfl_ratio=cfl_ratio, substeps=substeps, max_over_tau=max_over_tau,
                      min_value=float(values.min()), boundary_warning=boundary_warning)


def fd_generator_residual(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                          field_value: float, spec: CauchyGridSpec | None = None,
                          vbench0: float | None = None) -> float:
    """Max |discrete generator| of a constant field over interior nodes."""
    spec = spec or CauchyGridSpec(sentinel_check=False)
    if vbench0 is None:
        vbench0 = config.delta * float(np.sum(config.x0_array())) + (1.0 - config.delta)
    op = _FDOperator(oracle, config, spec, vbench0)
    res = op.apply(np.full((spec.nx, spec.ny), field_value))
    return float(np.abs(res[1:-1, 1:-1]).max())


# ---------------------------------------------------------------------------
# Gradients of log u by bump-and-revalue with common random numbers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GradientBlock:
    """Central-difference gradients of log u, terminal and per-horizon profiles."""

    dlogu_x: np.ndarray          # (n,)
    dlogu_y: np.ndarray          # (n,)
    dlogu_m: float
    profile_x: np.ndarray        # (K+1, n) per-horizon gradients
    profile_y: np.ndarray        # (K+1, n)
    profile_m: np.ndarray        # (K+1,)
    u_base: UProfile
    se_x: np.ndarray
    se_y: np.ndarray
    se_m: float
    one_sided: tuple[str, ...]   # labels of coordinates where a one-sided difference was used


def _bumped_config(config: ScenarioConfig, x0=None, y0=None) -> ScenarioConfig:
    from dataclasses import replace
    kw = {}
    if x0 is not None:
        kw["x0"] = tuple(x0)
    if y0 is not None:
        kw["y0"] = tuple(y0)
    return replace(config, **kw)


def grad_log_u(oracle: MarketCoefficientOracle, config: ScenarioConfig,
               m0=1.0, n_paths: int | None = None, seed: int | None = None,
               strategies: StrategyRule | None = None,
               h_abs: float | None = None, h_rel: float | None = None) -> GradientBlock:
    """Bump-and-revalue gradients of log u in (x0, y0, m), all horizons at once.

    Runs in frozen-m, exogenous-Y mode: the Cauchy-problem state (x, y)
    requires a free y0, and a well-defined D_m needs the peer-average leg
    frozen.  m0 is the frozen peer path (scalar or per-node array); its bump
    is a uniform shift.  Streams are reused across bumps (common random
    numbers); bumps that would cross zero fall back to one-sided differences
    and are flagged.
    """
    if n_paths is None:
        n_paths = config.solver.n_paths
    if seed is None:
        seed = config.seed
    h_abs = h_abs if h_abs is not None else config.solver.bump_abs
    h_rel = h_rel if h_rel is not None else config.solver.bump_rel
    m0 = np.asarray(m0, dtype=np.float64)

    def run(cfg, m_val):
        return u_profile_mc(oracle, cfg, n_paths, seed=seed, strategies=strategies,
                            frozen_m=m_val, y_mode="exogenous")

    base = run(config, m0)
    n = config.n_stocks
    K = config.steps
    one_sided: list[str] = []

    def central(label, plus_prof, minus_prof, h_plus, h_minus):
        dp = np.log(plus_prof.p) - np.log(minus_prof.p)
        grad = dp / (h_plus + h_minus)
        se = np.sqrt((plus_prof.p_se / plus_prof.p) ** 2
                     + (minus_prof.p_se / minus_prof.p) ** 2) / (h_plus + h_minus)
        return grad, se

    profile_x = np.zeros((K + 1, n)); se_x = np.zeros(n)
    x0 = config.x0_array()
    for i in range(n):
        h = max(h_abs, h_rel * abs(x0[i]))
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        if xm[i] <= 0.0:
            xm = x0.copy()
            one_sided.append(f"x{i}")
            g, se = central(f"x{i}", run(_bumped_config(config, x0=xp), m0), base, h, 0.0)
        else:
            g, se = central(f"x{i}", run(_bumped_config(config, x0=xp), m0),
                            run(_bumped_config(config, x0=xm), m0), h, h)
        profile_x[:, i] = g
        se_x[i] = se[-1]

    profile_y = np.zeros((K + 1, n)); se_y = np.zeros(n)
    y0 = config.y0_array()
    for i in range(n):
        h = max(h_abs, h_rel * abs(y0[i]))
        yp = y0.copy(); yp[i] += h
        ym = y0.copy(); ym[i] -= h
        if ym[i] <= 0.0:
            ym = y0.copy()
            one_sided.append(f"y{i}")
            g, se = central(f"y{i}", run(_bumped_config(config, y0=yp), m0), base, h, 0.0)
        else:
            g, se = central(f"y{i}", run(_bumped_config(config, y0=yp), m0),
                            run(_bumped_config(config, y0=ym), m0), h, h)
        profile_y[:, i] = g
        se_y[i] = se[-1]

    hm = max(h_abs, h_rel * float(np.mean(np.abs(m0))))
    if np.any(m0 - hm <= 0.0):
        one_sided.append("m")
        gm, sem = central("m", run(config, m0 + hm), base, hm, 0.0)
    else:
        gm, sem = central("m", run(config, m0 + hm), run(config, m0 - hm), hm, hm)

    return GradientBlock(
        dlogu_x=profile_x[-1].copy(), dlogu_y=profile_y[-1].copy(), dlogu_m=float(gm[-1]),
        profile_x=profile_x, profile_y=profile_y, profile_m=gm,
        u_base=base, se_x=se_x, se_y=se_y, se_m=float(sem[-1]),
        one_sided=tuple(one_sided),
    )


# ---------------------------------------------------------------------------
# Fichera drift on the orthant faces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceRecord:
    face: str          # "x0", "x1", ..., "y0", ...
    f_min: float
    f_max: float
    verdict: str       # nonnegative_on_face | negative_on_face | mixed


@dataclass(frozen=True)
class FicheraReport:
    faces: tuple[FaceRecord, ...]
    verdict: str       # no_relative_arbitrage | relative_arbitrage_exists | inconclusive

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "faces": [
                {"face": f.face, "f_min": f.f_min, "f_max": f.f_max, "verdict": f.verdict}
                for f in self.faces
            ],
        }


def fichera_check(oracle: MarketCoefficientOracle, config: ScenarioConfig,
                  box: tuple[float, float] = (0.05, 8.0), samples_per_face: int = 64,
                  seed: int | None = None, tol: float = 1e-10,
                  vbench0: float | None = None,
                  num_h: float | None = None) -> FicheraReport:
    """Sign of the Fichera drift f_i = b-hat_i - 1/2 sum_j D_j a-hat_ij on each face.

    The auxiliary diffusion has drift b-hat_i = (delta/Vbench(0)) sum_j a_ij on
    the stock block (zero on the invested-capital block) and block-diagonal
    covariance (a, psi).  Faces are {x_i = 0} and {y_i = 0}; face values are
    limits, taken analytically when the oracle provides divergence closed
    forms and by one-sided differences into the interior otherwise.
    """
    from .rng import substream

    n = config.n_stocks
    delta = config.delta
    if vbench0 is None:
        vbench0 = delta * float(np.sum(config.x0_array())) + (1.0 - delta)
    if seed is None:
        seed = config.seed
    if num_h is None:
        num_h = 1e-5 * box[1]

    lo, hi = box
    rng = substream(seed, "fichera-faces")
    faces: list[FaceRecord] = []

    def sample_states(face_block: str, face_idx: int):
        x = np.exp(rng.uniform(math.log(lo), math.log(hi), size=(samples_per_face, n)))
        y = np.exp(rng.uniform(math.log(lo), math.log(hi), size=(samples_per_face, n)))
        if face_block == "x":
            x[:, face_idx] = FACE_EPS
        else:
            y[:, face_idx] = FACE_EPS
        return x, y

    def f_values(face_block: str, face_idx: int) -> tuple[np.ndarray, bool]:
        x, y = sample_states(face_block, face_idx)
        meas = MeasureState(y=y, m=np.ones(x.shape[0]))
        numeric = False
        if face_block == "x":
            a = oracle.a_matrix(0.0, x, meas)
            bhat = (delta / vbench0) * a[:, face_idx, :].sum(axis=1)
            if oracle.a_div is not None:
                div = oracle.a_div(x, y)[:, face_idx]
            else:
                numeric = True
                div = _divergence_numeric(lambda xx, yy: oracle.a_matrix(0.0, xx, MeasureState(y=yy, m=np.ones(xx.shape[0]))),
                                          x, y, face_idx, "x", num_h)
        else:
            bhat = np.zeros(x.shape[0])
            if oracle.psi_div is not None:
                div = oracle.psi_div(x, y)[:, face_idx]
            else:
                numeric = True
                div = _divergence_numeric(lambda xx, yy: oracle.psi_matrix(0.0, xx, yy),
                                          x, y, face_idx, "y", num_h)
        vals = bhat - 0.5 * div
        if not np.all(np.isfinite(vals)):
            return np.array([np.nan]), numeric
        return vals, numeric

    for block in ("x", "y"):
        for i in range(n):
            vals, numeric = f_values(block, i)
            if np.any(~np.isfinite(vals)):
                faces.append(FaceRecord(face=f"{block}{i}", f_min=float("nan"),
                                        f_max=float("nan"), verdict="mixed"))
                continue
            # One-sided differences carry an O(h) bias; widen the sign band.
            tol_eff = tol if not numeric else max(tol, 10.0 * num_h)
            fmin, fmax = float(vals.min()), float(vals.max())
            if fmin >= -tol_eff:
                verdict = "nonnegative_on_face"
            elif fmax < -tol_eff:
                verdict = "negative_on_face"
            else:
                verdict = "mixed"
            faces.append(FaceRecord(face=f"{block}{i}", f_min=fmin, f_max=fmax, verdict=verdict))

    if all(f.verdict == "nonnegative_on_face" for f in faces):
        verdict = "no_relative_arbitrage"
    elif all(f.verdict == "negative_on_face" for f in faces):
        verdict = "relative_arbitrage_exists"
    else:
        verdict = "inconclusive"
    return FicheraReport(faces=tuple(faces), verdict=verdict)


def _divergence_numeric(matrix_eval, x: np.ndarray, y: np.ndarray, row: int,
                        block: str, h: float) -> np.ndarray:
    """One-sided sum_j D_j A_row,j using bumps of the block coordinates into the interior."""
    base = matrix_eval(x, y)
    n = x.shape[1]
    out = np.zeros(x.shape[0])
    for j in range(n):
        if block == "x":
            xp = x.copy(); xp[:, j] += h
            diff = (matrix_eval(xp, y) - base) / h
        else:
            yp = y.copy(); yp[:, j] += h
            diff = (matrix_eval(x, yp) - base) / h
        out += diff[:, row, j]
    return out
