"""Scenario library: a behavioral Merton market, a zero-control problem, a
closed-form consumption-style problem, and two evaluation-only objectives.

Each scenario bundles a model, a preference, the control transform used in
the running term, and a way to build a candidate path ensemble.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .adjoint import AdjointPair, solve_adjoint_analytic, solve_adjoint_lsmc
from .errors import ConfigError, DomainError, NumericalError
from .functional import ObjectiveValue, RunningCost, evaluate_objective, wealth_running_cost
from .preference import DistortionFn, PreferenceSpec, UtilityFn
from .sde import (STREAM_ODDS, ControlSpec, ModelSpec, PathEnsemble, TimeGrid, block_generator,
                  brownian_increments, example_model, market_model, simulate_pricing_kernel, simulate_state,
                  _fill_blocks)

SCENARIO_IDS = ("jz_market", "zero_control", "closed_form", "consumption_eval", "gambling_eval")
ANALYTIC_IDS = ("jz_market", "zero_control", "closed_form")
GH_NODES = 96
TABLE_POINTS = 401


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one scenario run.

    Market: ``x0, r, b, sigma, theta, T``.  Grid: ``steps, n_paths, seed``.
    ``control_scale`` multiplies the candidate control; ``control_value``
    sets a constant candidate where the scenario takes one.
    """

    id: str
    x0: float = 1.0
    r: float = 0.02
    b: float = 0.06
    sigma: float = 0.2
    theta: float = 0.2
    T: float = 1.0
    steps: int = 100
    n_paths: int = 100_000
    seed: int = 42
    pref: PreferenceSpec | None = None
    control_scale: float = 1.0
    control_value: float = 0.0
    alpha: float = 0.5
    stock_fraction: float = 0.5
    consumption: float = 0.05
    stake: float = 0.05
    win_prob: float = 0.1
    win_multiplier: float = 8.0

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ConfigError(f"unknown scenario {self.id!r}; expected one of {SCENARIO_IDS}")
        if not self.x0 > 0:
            raise ConfigError("x0 must be positive")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.id == "jz_market" and abs(self.sigma * self.theta - (self.b - self.r)) > 1e-12:
            raise ConfigError("jz_market needs sigma * theta = b - r (complete, arbitrage-free market)")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.steps)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "pref"}
        out["pref"] = self.preference().to_dict()
        return out

    def preference(self) -> PreferenceSpec:
        return self.pref if self.pref is not None else default_preference(self.id, self.alpha)


def default_preference(scenario_id: str, alpha: float = 0.5) -> PreferenceSpec:
    zero = UtilityFn.zero()
    ident = DistortionFn.identity()
    if scenario_id == "jz_market":
        return PreferenceSpec(zero, zero, UtilityFn.power(0.5), ident, ident, DistortionFn.lopes(0.5, 0.3, 0.3))
    if scenario_id == "zero_control":
        return PreferenceSpec(UtilityFn.power(0.5), UtilityFn.power(0.5), zero,
                              DistortionFn.lopes(0.3, 0.5, 1.0), DistortionFn.lopes(0.6, 1.0, 0.5), ident)
    if scenario_id == "closed_form":
        return PreferenceSpec(UtilityFn.power(alpha), UtilityFn.power(alpha), zero,
                              DistortionFn.lopes(0.0, 1.0, 0.0), ident, ident)
    if scenario_id == "consumption_eval":
        return PreferenceSpec(UtilityFn.power(0.5), UtilityFn.power(0.5), UtilityFn.power(0.5),
                              ident, ident, DistortionFn.lopes(0.5, 0.3, 0.3))
    return PreferenceSpec(UtilityFn.power(0.5), UtilityFn.power(0.5), UtilityFn.power(0.5),
                          DistortionFn.lopes(0.5, 0.3, 0.3), DistortionFn.lopes(0.5, 0.3, 0.3),
                          DistortionFn.lopes(0.5, 0.3, 0.3))


def preset(scenario_id: str) -> ScenarioConfig:
    """Named default configuration for each scenario."""
    if scenario_id == "closed_form":
        return ScenarioConfig("closed_form", steps=200)
    if scenario_id == "jz_market":
        return ScenarioConfig("jz_market", steps=100)
    if scenario_id in SCENARIO_IDS:
        return ScenarioConfig(scenario_id, steps=100)
    raise ConfigError(f"unknown scenario {scenario_id!r}")


# ---------------------------------------------------------------- closed form

def _lopes_constant(dist: DistortionFn) -> float:
    """``(1 - nu)(b + 1)``: the gain distortion's slope at 0."""
    if dist.kind != "lopes":
        raise ConfigError("closed_form needs a Lopes gain distortion")
    if dist.a <= 0:
        raise ConfigError("closed_form needs a Lopes gain distortion with a > 0")
    if dist.nu >= 1:
        raise DomainError("closed_form needs nu < 1")
    return (1.0 - dist.nu) * (dist.b + 1.0)


def closed_form_optimal(t, alpha: float, nu: float, beta: float, T: float):
    """Optimal deterministic stake ``((T - t) / ((1-nu)(beta+1)))**(1/(alpha-1))``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not nu < 1:
        raise DomainError("nu must be below 1")
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    ta = np.asarray(t, dtype=float)
    if np.any(ta >= T) or np.any(ta < 0):
        raise DomainError("closed-form stake is defined for 0 <= t < T")
    out = ((T - ta) / ((1.0 - nu) * (beta + 1.0))) ** (1.0 / (alpha - 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ClosedFormPaths:
    """Closed-form optimal state and control with the undistorted comparison.

    ``ruin_index[k]`` is the first grid index at which path ``k`` is
    exhausted; states and controls are 0 from there on.  The undistorted
    fields are ``None`` when the comparison was not requested.
    """

    X: np.ndarray
    u: np.ndarray
    ruin_index: np.ndarray
    stake: np.ndarray
    X_undistorted: np.ndarray | None = None
    u_undistorted: np.ndarray | None = None
    ruin_index_undistorted: np.ndarray | None = None


def _cf_paths(V: np.ndarray, t: np.ndarray, T: float, x0: float, alpha: float, kappa: float):
    """States and controls for ``u X = kappa**-1 (T-t)**(1/(alpha-1))`` scaled form."""
    n, m = V.shape
    e = 1.0 / (alpha - 1.0)
    head = (T - t[:-1]) ** e                      # (T-t)^{1/(alpha-1)} before the horizon
    integrand = head[None, :] / V[:, :-1]
    J = np.zeros((n, m - 1))
    if m > 2:
        dt = np.diff(t[:-1])
        np.cumsum(0.5 * (integrand[:, 1:] + integrand[:, :-1]) * dt, axis=1, out=J[:, 1:])
    D = x0 * kappa - J
    live = np.minimum.accumulate(D > 0, axis=1)
    X = np.zeros((n, m))
    u = np.zeros((n, m))
    X[:, :-1] = np.where(live, V[:, :-1] * D / kappa, 0.0)
    u[:, :-1] = np.where(live, head[None, :] / np.where(live, V[:, :-1] * D, 1.0), 0.0)
    alive = np.concatenate([live, np.zeros((n, 1), dtype=bool)], axis=1)
    ruin = np.argmin(alive, axis=1)
    return X, u, ruin


def closed_form_state_and_control(dW: np.ndarray, grid: TimeGrid, x0: float, alpha: float, nu: float,
                                  beta: float, *, undistorted: bool = True) -> ClosedFormPaths:
    """Evaluate the closed-form optimum pathwise on given Brownian increments.

    ``X = V (x0 - int_0^t c(s)/V_s ds)`` with ``V = exp(W - t/2)`` and
    ``c = ((T-t)/K)**(1/(alpha-1))``, ``K = (1-nu)(beta+1)``; the integral
    uses the trapezoid rule.  The stake ``c`` is not integrable up to ``T``,
    so every path is exhausted before the horizon; exhausted paths stay at
    0 with zero control.  The undistorted comparison uses ``K = 1``.
    """
    K = (1.0 - nu) * (beta + 1.0)
    closed_form_optimal(0.0, alpha, nu, beta, grid.T)  # parameter checks
    t = grid.times
    W = np.zeros((dW.shape[0], grid.steps + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    V = np.exp(W - 0.5 * t[None, :])
    e = 1.0 / (alpha - 1.0)
    X, u, ruin = _cf_paths(V, t, grid.T, x0, alpha, K**e)
    stake = np.zeros(grid.steps + 1)
    stake[:-1] = closed_form_optimal(t[:-1], alpha, nu, beta, grid.T)
    if not undistorted:
        return ClosedFormPaths(X, u, ruin, stake)
    Xu, uu, ruin_u = _cf_paths(V, t, grid.T, x0, alpha, 1.0)
    return ClosedFormPaths(X, u, ruin, stake, Xu, uu, ruin_u)


def closed_form_feedback(alpha: float, nu: float, beta: float, T: float) -> ControlSpec:
    """Feedback ``u = c(t) / x`` (0 at an exhausted state and at the horizon)."""

    def g(t, x):
        x = np.asarray(x, dtype=float)
        if t >= T:
            return np.zeros_like(x)
        c = closed_form_optimal(t, alpha, nu, beta, T)
        # a near-exhausted state gives an infinite stake, which the scheme maps to ruin
        with np.errstate(over="ignore"):
            return np.divide(c, x, out=np.zeros_like(x), where=x > 0)

    return ControlSpec.feedback(g)


# ------------------------------------------------------------------ jz market

def kernel_cdf(rho, r: float, theta: float, T: float):
    """Lognormal CDF of the terminal pricing kernel (a step when ``theta = 0``)."""
    rho = np.asarray(rho, dtype=float)
    if theta == 0:
        return np.where(rho >= np.exp(-r * T), 1.0, 0.0)
    return ndtr((np.log(rho) + (r + 0.5 * theta**2) * T) / (theta * np.sqrt(T)))


def jz_terminal_wealth(rho_T, lam: float, pref: PreferenceSpec, r: float, theta: float, T: float):
    """``(l')^{-1}(lam * rho / w'(F(rho)))`` pathwise."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    rho_T = np.asarray(rho_T, dtype=float)
    return pref.terminal_l.deriv_inverse(lam * rho_T / pref.terminal_w.deriv(kernel_cdf(rho_T, r, theta, T)))


def check_jz_monotone(pref: PreferenceSpec, r: float, theta: float, T: float, rho_sample) -> None:
    """Require ``rho / w'(F(rho))`` to increase over the sampled kernel range."""
    if theta == 0:
        return
    lo, hi = np.log(np.min(rho_sample)), np.log(np.max(rho_sample))
    rho = np.exp(np.linspace(lo, hi, 2001))
    y = rho / pref.terminal_w.deriv(kernel_cdf(rho, r, theta, T))
    if np.any(np.diff(y) <= 0):
        raise ConfigError("terminal distortion makes rho / w'(F(rho)) non-monotone; terminal wealth map is invalid")


@dataclass(frozen=True)
class LambdaSolution:
    lam: float
    budget: float
    iterations: int
    bracket: tuple[float, float]


def solve_budget_lambda(rho_T, x0: float, pref: PreferenceSpec, r: float, theta: float, T: float,
                        rtol: float = 1e-4, bracket=(1e-8, 1e8), max_iter: int = 400) -> LambdaSolution:
    """Bisection on ``log lam`` for ``mean(rho_T * X_T(lam)) = x0``."""
    if pref.terminal_l.kind != "power":
        raise ConfigError("budget solver needs a power terminal utility")
    rho_T = np.asarray(rho_T, dtype=float)
    slope = pref.terminal_w.deriv(kernel_cdf(rho_T, r, theta, T))

    def budget(lam: float) -> float:
        return float(np.mean(rho_T * pref.terminal_l.deriv_inverse(lam * rho_T / slope)))

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    with np.errstate(over="ignore"):
        b_lo, b_hi = budget(np.exp(lo)), budget(np.exp(hi))
    if not (b_lo >= x0 >= b_hi):
        raise NumericalError(f"budget root not bracketed in [{bracket[0]:g}, {bracket[1]:g}]")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        val = budget(np.exp(mid))
        if abs(val - x0) <= rtol * x0:
            return LambdaSolution(float(np.exp(mid)), val, it, (float(np.exp(lo)), float(np.exp(hi))))
        if val > x0:
            lo = mid
        else:
            hi = mid
    raise NumericalError("budget bisection did not converge")


def jz_wealth_table(t: float, y_grid: np.ndarray, lam: float, pref: PreferenceSpec, r: float, theta: float,
                    T: float) -> np.ndarray:
    """Optimal wealth at time ``t`` as a function of ``y = log rho_t``.

    ``X_t = E[rho_{t,T} X_T(rho_t rho_{t,T})]`` by Gauss-Hermite quadrature,
    where ``rho_{t,T}`` is the kernel's growth over ``[t, T]``.
    """
    tau = T - t
    rho = np.exp(y_grid)
    if tau <= 0:
        return jz_terminal_wealth(rho, lam, pref, r, theta, T)
    xi, wt = hermegauss(GH_NODES)
    wt = wt / np.sqrt(2.0 * np.pi)
    growth = np.exp(-(r + 0.5 * theta**2) * tau - theta * np.sqrt(tau) * xi)
    XT = jz_terminal_wealth(rho[:, None] * growth[None, :], lam, pref, r, theta, T)
    return (XT * growth[None, :]) @ wt


def jz_optimal_paths(rho: np.ndarray, grid: TimeGrid, lam: float, pref: PreferenceSpec, r: float, theta: float,
                     sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Optimal wealth and stock fraction along kernel paths.

    Wealth is tabulated in ``log rho`` per grid time and interpolated by a
    cubic spline; the replicating fraction is
    ``-theta * d log X / d log rho / sigma``.
    """
    n, m = rho.shape
    X = np.empty((n, m))
    u = np.empty((n, m))
    logr = np.log(rho)
    for i, t in enumerate(grid.times):
        y = logr[:, i]
        lo, hi = y.min(), y.max()
        pad = 0.05 * (hi - lo) + 1e-3
        yg = np.linspace(lo - pad, hi + pad, TABLE_POINTS)
        spline = CubicSpline(yg, np.log(jz_wealth_table(t, yg, lam, pref, r, theta, grid.T)))
        X[:, i] = np.exp(spline(y))
        u[:, i] = -theta * spline(y, 1) / sigma
    return X, u


# ------------------------------------------------------------- scenario build

@dataclass
class Scenario:
    """A built scenario: model, preference, candidate ensemble and adjoint."""

    config: ScenarioConfig
    model: ModelSpec
    pref: PreferenceSpec
    transform: str
    extra_f: RunningCost | None
    ensemble: PathEnsemble
    adjoint: AdjointPair | None = None
    info: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.config.id

    def default_direction(self, size: float = 0.1) -> np.ndarray:
        """Constant ``size`` on points where the candidate control is nonzero."""
        return np.where(self.ensemble.u != 0, size, 0.0)


def build_scenario(cfg: ScenarioConfig, *, workers: int = 1) -> Scenario:
    """Simulate the candidate ensemble and attach the closed-form adjoint."""
    pref = cfg.preference()
    grid = cfg.grid
    if cfg.id == "closed_form":
        return _build_closed_form(cfg, pref, grid, workers)
    if cfg.id == "zero_control":
        model = example_model()
        ens = simulate_state(model, ControlSpec.constant(cfg.control_value * cfg.control_scale), grid,
                             cfg.n_paths, cfg.x0, cfg.seed, workers=workers)
        ens = ens.replace(meta={**ens.meta, "scenario": "zero_control"})
        return Scenario(cfg, model, pref, "raw_u", None, ens, solve_adjoint_analytic("zero_control", ens))
    if cfg.id == "jz_market":
        return _build_jz(cfg, pref, grid, workers)
    raise ConfigError(f"scenario {cfg.id!r} is evaluation-only; use evaluate_intro_objectives")


def _build_closed_form(cfg: ScenarioConfig, pref: PreferenceSpec, grid: TimeGrid, workers: int) -> Scenario:
    dist = pref.varpi_plus
    _lopes_constant(dist)
    dW = brownian_increments(grid, cfg.n_paths, cfg.seed, workers=workers)
    cf = closed_form_state_and_control(dW, grid, cfg.x0, cfg.alpha, dist.nu, dist.b, undistorted=False)
    model = example_model()
    ens = PathEnsemble(grid=grid, seed=cfg.seed, dW=dW, X=cf.X, u=cf.u,
                       diagnostics={"ruin_fraction": float(np.mean(cf.ruin_index < grid.steps)),
                                    "median_ruin_time": float(np.median(grid.times[cf.ruin_index]))},
                       meta={"model": model.name, "scenario": "closed_form"})
    info = {"closed_form": cf}
    if cfg.control_scale != 1.0:
        ctrl = ControlSpec.deterministic(cfg.control_scale * cf.u)
        ens = simulate_state(model, ctrl, grid, cfg.n_paths, cfg.x0, cfg.seed, base=ens)
        ens = ens.replace(meta={**ens.meta, "scenario": "closed_form", "control_scale": cfg.control_scale})
    adj = solve_adjoint_analytic("closed_form", ens)
    if cfg.control_scale != 1.0:
        adj = solve_adjoint_lsmc(ens, model, pref, 3, control_transform="u_times_x", extra_f=wealth_running_cost())
    return Scenario(cfg, model, pref, "u_times_x", wealth_running_cost(), ens, adj, info)


def _build_jz(cfg: ScenarioConfig, pref: PreferenceSpec, grid: TimeGrid, workers: int) -> Scenario:
    dW = brownian_increments(grid, cfg.n_paths, cfg.seed, workers=workers)
    rho = simulate_pricing_kernel(grid, cfg.r, cfg.theta, dW)
    check_jz_monotone(pref, cfg.r, cfg.theta, cfg.T, rho[:, -1])
    sol = solve_budget_lambda(rho[:, -1], cfg.x0, pref, cfg.r, cfg.theta, cfg.T)
    X, u = jz_optimal_paths(rho, grid, sol.lam, pref, cfg.r, cfg.theta, cfg.sigma)
    X[:, -1] = jz_terminal_wealth(rho[:, -1], sol.lam, pref, cfg.r, cfg.theta, cfg.T)
    model = market_model(cfg.r, cfg.b, cfg.sigma)
    meta = {"model": model.name, "scenario": "jz_market"}
    ens = PathEnsemble(grid=grid, seed=cfg.seed, dW=dW, X=X, u=u, rho=rho,
                       diagnostics={"lambda": sol.lam, "budget": sol.budget, "bisection_iterations": sol.iterations,
                                    "initial_wealth_model": float(np.mean(X[:, 0]))},
                       meta=meta)
    adj = solve_adjoint_analytic("jz_market", ens, {"lam": sol.lam, "theta": cfg.theta})
    if cfg.control_scale != 1.0:
        ens = simulate_state(model, ControlSpec.deterministic(cfg.control_scale * u), grid, cfg.n_paths,
                             float(X[0, 0]), cfg.seed, base=ens)
        ens = ens.replace(rho=rho, meta={**meta, "control_scale": cfg.control_scale})
        adj = solve_adjoint_lsmc(ens, model, pref, 3)
    return Scenario(cfg, model, pref, "raw_u", None, ens, adj, {"lambda": sol})


# ------------------------------------------------------- evaluation-only

def consumption_model(r: float, b: float, sigma: float, stock_fraction: float) -> ModelSpec:
    """Wealth with a fixed stock fraction; the control is consumption per unit wealth."""
    drift = r + (b - r) * stock_fraction
    return ModelSpec.linear(beta=lambda t, c: drift - np.asarray(c, dtype=float),
                            s=lambda t, c: np.full(np.shape(c), sigma * stock_fraction),
                            beta_u=lambda t, c: np.full(np.shape(c), -1.0),
                            s_u=lambda t, c: np.zeros(np.shape(c)), name="consumption")


def gambling_odds(grid: TimeGrid, n_paths: int, seed: int, win_prob: float, win_multiplier: float,
                  workers: int = 1) -> np.ndarray:
    """i.i.d. two-point odds per grid point: ``win_multiplier`` w.p. ``win_prob``, else -1."""
    if not 0 <= win_prob <= 1:
        raise ConfigError("win probability must lie in [0, 1]")
    out = np.empty((n_paths, grid.steps + 1))
    _fill_blocks(n_paths, lambda g, m: np.where(g.random((m, grid.steps + 1)) < win_prob, win_multiplier, -1.0),
                 out, seed, STREAM_ODDS, workers)
    return out


def evaluate_intro_objectives(cfg: ScenarioConfig, ensemble: PathEnsemble | None = None, *,
                              workers: int = 1) -> ObjectiveValue:
    """Objectives of the consumption and gambling motivating problems.

    Consumption: undistorted running utility of ``c X`` plus the distorted
    terminal term.  Gambling: stake ``c`` per unit wealth with two-point odds
    ``K``; gains ``K+ c X`` and losses ``K- c X`` are distorted
    cross-sectionally.  ``ensemble`` (if given) supplies the Brownian
    increments.
    """
    pref = cfg.preference()
    grid = cfg.grid
    dW = ensemble.dW if ensemble is not None else brownian_increments(grid, cfg.n_paths, cfg.seed, workers=workers)
    n = dW.shape[0]
    if cfg.id == "consumption_eval":
        if cfg.consumption < 0:
            raise DomainError("consumption must be nonnegative")
        pref = dataclasses.replace(pref, varpi_plus=DistortionFn.identity())
        model = consumption_model(cfg.r, cfg.b, cfg.sigma, cfg.stock_fraction)
        ens = simulate_state(model, ControlSpec.constant(cfg.consumption, lower=0.0), grid, n, cfg.x0, cfg.seed, dW=dW)
        return evaluate_objective(ens, pref, "u_times_x")
    if cfg.id == "gambling_eval":
        if cfg.stake < 0:
            raise DomainError("stake must be nonnegative")
        K = gambling_odds(grid, n, cfg.seed, cfg.win_prob, cfg.win_multiplier, workers)
        stake = cfg.stake * K
        drift = cfg.r + (cfg.b - cfg.r) * cfg.stock_fraction
        vol = cfg.sigma * cfg.stock_fraction
        dt = grid.dt
        X = np.empty((n, grid.steps + 1))
        X[:, 0] = cfg.x0
        X[:, 1:] = cfg.x0 * np.exp(np.cumsum((drift + stake[:, :-1] - 0.5 * vol**2) * dt + vol * dW, axis=1))
        ens = PathEnsemble(grid=grid, seed=cfg.seed, dW=dW, X=X, u=stake, meta={"scenario": "gambling_eval"})
        return evaluate_objective(ens, pref, "u_times_x")
    raise ConfigError(f"{cfg.id!r} is not an evaluation-only scenario")


def golden_values() -> dict:
    """Versioned table of reference values shipped with the package."""
    with resources.files(__package__).joinpath("data/golden.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)
