"""Adjoint processes ``(p, q)``: closed forms and least-squares Monte Carlo."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .empirical import midpoint_ranks
from .errors import ConfigError, DataError, DomainError, NumericalError
from .functional import RunningCost, running_gradients
from .preference import PreferenceSpec
from .sde import ModelSpec, PathEnsemble

ANALYTIC_EXAMPLES = ("jz_market", "zero_control", "closed_form")
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class AdjointPair:
    p: np.ndarray
    q: np.ndarray
    method: str
    basis_degree: int = 0
    diagnostics: dict = field(default_factory=dict)


def terminal_condition(ensemble: PathEnsemble, pref: PreferenceSpec) -> np.ndarray:
    """``l'(X_T) w'(1 - F(X_T))`` with the ensemble's terminal ECDF.

    The ECDF is computed once per ensemble and cached on it.  Absorbed
    paths (``X_T = 0``) carry no first-order sensitivity and get 0.
    """
    cache = ensemble.cache
    if "terminal" not in cache:
        XT = ensemble.X[:, -1]
        if np.any(np.isnan(XT)):
            raise DataError("terminal states contain NaN")
        if np.any(XT < 0):
            raise DomainError("terminal states must be nonnegative (0 marks an absorbed path)")
        live = XT > 0
        out = np.zeros_like(XT)
        if not pref.terminal_l.is_zero and live.any():
            out[live] = pref.terminal_l.deriv(XT[live], 1)
            if not pref.terminal_w.is_identity:
                out[live] *= pref.terminal_w.deriv(1.0 - midpoint_ranks(XT)[live])
        out.setflags(write=False)
        cache["terminal"] = out
    return cache["terminal"]


def solve_adjoint_analytic(example_id: str, ensemble: PathEnsemble, params: dict | None = None) -> AdjointPair:
    """Closed-form adjoints of the three worked scenarios.

    ``jz_market`` needs ``ensemble.rho`` and ``params['lam']``,
    ``params['theta']``; ``closed_form`` yields ``p = T - t``, ``q = 0``.
    """
    params = params or {}
    tag = ensemble.meta.get("scenario")
    if example_id not in ANALYTIC_EXAMPLES:
        raise ConfigError(f"no closed-form adjoint for {example_id!r}")
    if tag is not None and tag != example_id:
        raise ConfigError(f"ensemble was built for {tag!r}, not {example_id!r}")
    shape = ensemble.X.shape
    if example_id == "zero_control":
        return AdjointPair(np.zeros(shape), np.zeros(shape), "analytic")
    if example_id == "closed_form":
        p = np.broadcast_to(ensemble.grid.T - ensemble.times, shape).copy()
        return AdjointPair(p, np.zeros(shape), "analytic")
    if ensemble.rho is None:
        raise ConfigError("jz_market adjoint needs the pricing kernel on the ensemble")
    try:
        lam, theta = float(params["lam"]), float(params["theta"])
    except KeyError as exc:
        raise ConfigError(f"jz_market adjoint needs parameter {exc}") from exc
    p = lam * ensemble.rho
    return AdjointPair(p, -theta * p, "analytic")


def _regressor(x: np.ndarray, degree: int):
    """Least-squares projector onto polynomials in standardized log state.

    Absorbed states (0) form their own group whose fit is the group mean.
    Returns a function mapping a response vector to fitted values.
    """
    n = x.size
    live = x > 0
    idx_live = np.flatnonzero(live)
    idx_dead = np.flatnonzero(~live)
    if idx_live.size:
        z = np.log(x[idx_live])
        spread = z.std()
        deg = degree if spread > 1e-12 * max(1.0, abs(z.mean())) else 0
        if deg:
            deg = min(deg, np.unique(z).size - 1)
        zs = (z - z.mean()) / spread if deg else z * 0.0
        A = np.vander(zs, deg + 1, increasing=True)
        q, r = np.linalg.qr(A)
        d = np.abs(np.diag(r))
        cond = float(d.max() / d.min()) if d.min() > 0 else np.inf
        if not cond < MAX_CONDITION:
            raise NumericalError(f"rank-deficient regression basis (condition number {cond:.3g})")
    else:
        q, cond = None, 1.0

    def fit(y: np.ndarray) -> np.ndarray:
        out = np.empty(n)
        if q is not None:
            yl = y[idx_live]
            out[idx_live] = q @ (q.T @ yl)
        if idx_dead.size:
            out[idx_dead] = y[idx_dead].mean()
        return out

    fit.condition = cond
    return fit


def solve_adjoint_lsmc(ensemble: PathEnsemble, model: ModelSpec, pref: PreferenceSpec, basis_degree: int = 3, *,
                       control_transform: str = "raw_u", extra_f: RunningCost | None = None) -> AdjointPair:
    """Backward regression for ``dp = -(b_x p + sigma_x q + h_x) dt + q dW``.

    ``h_x`` is the state derivative of the running integrand (zero unless
    the running reward depends on the state).  At each step
    ``q_i = E[(p_{i+1} - E[p_{i+1} | X_i]) dW_i | X_i] / dt`` and the drift is treated
    semi-implicitly in ``b_x``:
    ``p_i = (E[p_{i+1} | X_i] + (sigma_x q_i + h_x) dt) / (1 - b_x dt)``.
    Conditional expectations are regressions on polynomials of degree
    ``basis_degree`` in standardized ``log X_i``.
    """
    n, N = ensemble.dW.shape
    if basis_degree < 0:
        raise ConfigError("basis degree must be nonnegative")
    if n < 10 * (basis_degree + 1):
        raise ConfigError(f"LSMC needs at least {10 * (basis_degree + 1)} paths for degree {basis_degree}")
    X, U, dW = ensemble.X, ensemble.u, ensemble.dW
    if np.any(np.isnan(X)):
        raise DataError("ensemble contains NaN")
    dt = ensemble.grid.dt
    t = ensemble.times
    needs_running = control_transform == "u_times_x" or extra_f is not None
    h_x = running_gradients(ensemble, pref, control_transform, extra_f).h_x if needs_running else None
    p = np.empty((n, N + 1))
    q = np.zeros((n, N + 1))
    p[:, N] = terminal_condition(ensemble, pref)
    worst = 1.0
    for i in range(N - 1, -1, -1):
        nxt = p[:, i + 1]
        x = X[:, i]
        if not np.any(nxt):
            if h_x is None or not np.any(h_x[:, i]):
                p[:, i] = 0.0
                continue
        fit = _regressor(x, basis_degree)
        worst = max(worst, fit.condition)
        cond = fit(nxt)
        # centring is exact (E[dW | X_i] = 0) and removes the level of p from q's regression noise
        qi = fit((nxt - cond) * dW[:, i]) / dt
        src = model.sigma_x(t[i], U[:, i], x) * qi
        if h_x is not None:
            src = src + h_x[:, i]
        denom = 1.0 - model.b_x(t[i], U[:, i], x) * dt
        if np.any(denom <= 0):
            raise NumericalError(f"step too coarse for the implicit drift at grid index {i}")
        p[:, i] = (cond + src * dt) / denom
        q[:, i] = qi
    if N:
        q[:, N] = q[:, N - 1]
    return AdjointPair(p, q, "lsmc", basis_degree, {"max_condition": worst})
