"""Pathwise maximum-principle residuals, Gateaux derivatives and duality checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointPair, terminal_condition
from .errors import ConfigError, DataError
from .functional import RunningCost, evaluate_objective, running_gradients
from .preference import PreferenceSpec
from .sde import (ControlSpec, ModelSpec, PathEnsemble, TimeGrid, direction_values, simulate_state,
                  simulate_variational)

DEFAULT_TOLERANCE = 1e-2


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass(frozen=True)
class MPReport:
    """Residual statistics per grid time (over paths with nonzero control)."""

    times: np.ndarray
    mean: np.ndarray
    rms: np.ndarray
    max_abs: np.ndarray
    included: np.ndarray
    overall_rms: float
    pooled_se: float
    tolerance: float
    excluded_fraction: float
    verdict: str

    def per_time(self) -> list[dict]:
        return [{"t": float(t), "mean": float(m), "rms": float(r), "max_abs": float(a), "n_included": int(k)}
                for t, m, r, a, k in zip(self.times, self.mean, self.rms, self.max_abs, self.included)]


def _aligned(ensemble: PathEnsemble, adjoint: AdjointPair) -> None:
    if adjoint.p.shape != ensemble.X.shape or adjoint.q.shape != ensemble.X.shape:
        raise DataError(f"adjoint shape {adjoint.p.shape} does not match the ensemble {ensemble.X.shape}")


def residual_field(ensemble: PathEnsemble, adjoint: AdjointPair, model: ModelSpec, pref: PreferenceSpec,
                   control_transform: str = "raw_u", extra_f: RunningCost | None = None, *,
                   degenerate_limit: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Pathwise residual and the mask of points where it is tested.

    ``raw_u``: ``p b_u + q sigma_u + f_u + marginal``.  ``u_times_x``: the
    same expressed per unit of state, ``(p b_u + q sigma_u + f_u)/X + marginal``,
    where ``marginal`` is the distorted marginal utility of ``u X``.
    Points with zero control or an absorbed state are masked out.
    """
    _aligned(ensemble, adjoint)
    X, U = ensemble.X, ensemble.u
    t = ensemble.times[None, :]
    g = running_gradients(ensemble, pref, control_transform, extra_f, degenerate_limit=degenerate_limit)
    drive = adjoint.p * model.b_u(t, U, X) + adjoint.q * model.sigma_u(t, U, X) + g.f_u
    mask = (U != 0) & (X > 0)
    if control_transform == "u_times_x":
        drive = np.divide(drive, X, out=np.zeros_like(drive), where=X > 0)
    R = np.where(mask, drive + g.marginal, 0.0)
    return R, mask


def mp_residual(ensemble: PathEnsemble, adjoint: AdjointPair, model: ModelSpec, pref: PreferenceSpec,
                control_transform: str = "raw_u", extra_f: RunningCost | None = None,
                tolerance: float | None = None, *, degenerate_limit: bool = True) -> MPReport:
    """Evaluate the first-order condition on a candidate and summarize it.

    The default tolerance is ``max(1e-2, 5 * pooled_se)`` where
    ``pooled_se`` is the standard error of the mean residual over all tested
    points.
    """
    R, mask = residual_field(ensemble, adjoint, model, pref, control_transform, extra_f,
                             degenerate_limit=degenerate_limit)
    counts = mask.sum(axis=0)
    safe = np.maximum(counts, 1)
    mean = R.sum(axis=0) / safe
    rms = np.sqrt((R**2).sum(axis=0) / safe)
    max_abs = np.abs(R).max(axis=0)
    vals = R[mask]
    overall = float(np.sqrt(np.mean(vals**2))) if vals.size else 0.0
    pooled = _se(vals)
    tol = max(DEFAULT_TOLERANCE, 5.0 * pooled) if tolerance is None else float(tolerance)
    return MPReport(times=ensemble.times, mean=mean, rms=rms, max_abs=max_abs, included=counts,
                    overall_rms=overall, pooled_se=pooled, tolerance=tol,
                    excluded_fraction=float(1.0 - mask.mean()),
                    verdict="consistent" if overall <= tol else "violated")


@dataclass(frozen=True)
class GateauxReport:
    """Finite-difference and analytic directional derivatives of the objective.

    Standard errors are across paths; ``gap_se`` is that of the pathwise
    difference between the extrapolated and analytic estimators.
    """

    analytic: float
    finite_diff: list
    extrapolated: float
    abs_gap: float
    analytic_se: float = 0.0
    extrapolated_se: float = 0.0
    gap_se: float = 0.0
    fd_se: list = field(default_factory=list)

    def consistent(self, rel: float = 5e-3, k: float = 3.0) -> bool:
        return self.abs_gap <= max(k * self.gap_se, rel * abs(self.analytic))

    def stationary(self, k: float = 3.0) -> bool:
        return (abs(self.analytic) <= k * self.analytic_se
                and abs(self.extrapolated) <= k * self.extrapolated_se)

    def to_dict(self) -> dict:
        return {"analytic": self.analytic, "analytic_se": self.analytic_se,
                "finite_diff": [[e, v] for e, v in self.finite_diff], "fd_se": list(self.fd_se),
                "extrapolated": self.extrapolated, "extrapolated_se": self.extrapolated_se,
                "abs_gap": self.abs_gap, "gap_se": self.gap_se}


def check_sign_compatible(u_bar: np.ndarray, v: np.ndarray) -> None:
    """Raise unless ``u_bar + v`` has the sign of ``u_bar`` everywhere."""
    u = u_bar + v
    bad = ((u_bar > 0) & (u <= 0)) | ((u_bar < 0) & (u >= 0)) | ((u_bar == 0) & (v != 0))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ConfigError(f"direction changes the control's sign (path {i}, grid index {j})")


def analytic_gateaux(ensemble: PathEnsemble, model: ModelSpec, pref: PreferenceSpec, direction,
                     control_transform: str = "raw_u", extra_f: RunningCost | None = None) -> np.ndarray:
    """Per-path directional derivative with frozen ranks.

    Sums the running partials along ``(v, Z)`` and the terminal sensitivity
    ``p_T Z_T``; the mean over paths is the analytic Gateaux derivative.
    """
    v = direction_values(direction, ensemble)
    ens = simulate_variational(ensemble, model, v)
    g = running_gradients(ensemble, pref, control_transform, extra_f)
    w = ensemble.grid.trapezoid_weights()
    return (g.h_u * v + g.h_x * ens.Z) @ w + terminal_condition(ensemble, pref) * ens.Z[:, -1]


def gateaux_fd(base_control: ControlSpec | None, direction, model: ModelSpec, pref: PreferenceSpec, grid: TimeGrid,
               n_paths: int, seed: int, eps_ladder=(0.1, 0.05, 0.025), *, x0: float = 1.0,
               control_transform: str = "raw_u", extra_f: RunningCost | None = None,
               base: PathEnsemble | None = None, workers: int = 1) -> GateauxReport:
    """Compare ``[J(u + eps v) - J(u)] / eps`` with the analytic derivative.

    Perturbed states reuse the base ensemble's increments.  ``base`` may be
    supplied to test a control whose states were not produced by the scheme.
    """
    eps = [float(e) for e in eps_ladder]
    if len(eps) < 2 or any(not 0 < e < 1 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps_ladder must be strictly decreasing within (0, 1) with at least two entries")
    if base is None:
        if base_control is None:
            raise ConfigError("gateaux_fd needs a base control or a base ensemble")
        base = simulate_state(model, base_control, grid, n_paths, x0, seed, workers=workers)
    u_bar = base.u
    v = direction_values(direction, base)
    check_sign_compatible(u_bar, v)
    J0 = evaluate_objective(base, pref, control_transform, extra_f)
    lower, upper = (-np.inf, np.inf) if base_control is None else (base_control.lower, base_control.upper)
    diffs = []
    for e in eps:
        ctrl = ControlSpec.deterministic(u_bar + e * v, lower, upper)
        pert = simulate_state(model, ctrl, base.grid, base.n_paths, float(base.X[0, 0]), base.seed, base=base)
        Je = evaluate_objective(pert, pref, control_transform, extra_f)
        diffs.append((Je.per_path - J0.per_path) / e)
        del pert, Je
    fd = [(e, float(d.mean())) for e, d in zip(eps, diffs)]
    r = eps[-2] / eps[-1]
    ext_path = (r * diffs[-1] - diffs[-2]) / (r - 1.0)
    ana_path = analytic_gateaux(base, model, pref, v, control_transform, extra_f)
    ext, ana = float(ext_path.mean()), float(ana_path.mean())
    return GateauxReport(analytic=ana, finite_diff=fd, extrapolated=ext, abs_gap=abs(ext - ana),
                         analytic_se=_se(ana_path), extrapolated_se=_se(ext_path),
                         gap_se=_se(ext_path - ana_path), fd_se=[_se(d) for d in diffs])


@dataclass(frozen=True)
class DualityResult:
    """Both sides of the duality identity and the paired standard error."""

    gap: float
    lhs: float
    rhs: float
    std_error: float

    @property
    def ratio(self) -> float:
        return self.gap / self.std_error if self.std_error > 0 else (0.0 if self.gap == 0 else np.inf)

    def holds(self, k: float = 3.0) -> bool:
        return self.gap <= k * self.std_error

    def to_dict(self) -> dict:
        return {"gap": self.gap, "lhs": self.lhs, "rhs": self.rhs, "std_error": self.std_error}


def duality_check(ensemble: PathEnsemble, adjoint: AdjointPair, model: ModelSpec, direction,
                  pref: PreferenceSpec | None = None, control_transform: str = "raw_u",
                  extra_f: RunningCost | None = None) -> DualityResult:
    """``E[p_T Z_T] + E int Z h_x dt`` against ``E int v (p b_u + q sigma_u) dt``.

    ``h_x`` is the state derivative of the running integrand; it vanishes
    (and may be omitted by passing ``pref=None``) when the running reward
    does not depend on the state.  Both sides use the same paths.
    """
    if ensemble.Z is None:
        raise DataError("duality check needs the variational process Z on the ensemble")
    _aligned(ensemble, adjoint)
    v = direction_values(direction, ensemble)
    X, U, Z = ensemble.X, ensemble.u, ensemble.Z
    t = ensemble.times[None, :]
    w = ensemble.grid.trapezoid_weights()
    lhs = adjoint.p[:, -1] * Z[:, -1]
    if pref is not None and (control_transform == "u_times_x" or extra_f is not None):
        lhs = lhs + (running_gradients(ensemble, pref, control_transform, extra_f).h_x * Z) @ w
    rhs = (v * (adjoint.p * model.b_u(t, U, X) + adjoint.q * model.sigma_u(t, U, X))) @ w
    diff = lhs - rhs
    return DualityResult(gap=abs(float(lhs.mean()) - float(rhs.mean())), lhs=float(lhs.mean()),
                         rhs=float(rhs.mean()), std_error=_se(diff))
