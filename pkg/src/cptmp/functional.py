"""Distorted (Choquet) expectations and the prospective objective functional."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .empirical import SampleSet, midpoint_ranks
from .errors import DataError, DomainError
from .preference import DistortionFn, PreferenceSpec, UtilityFn

RANK_BLOCK = 16
TRANSFORMS = ("raw_u", "u_times_x")
SPLIT_FOLDS = 20


@dataclass(frozen=True)
class ChoquetEstimate:
    value: float
    std_error: float
    n: int
    estimator: str


def _values(samples) -> np.ndarray:
    v = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float).ravel()
    if v.size == 0:
        raise DataError("no samples")
    if np.any(np.isnan(v)):
        raise DataError("samples contain NaN")
    if np.any(v < 0):
        raise DomainError("samples must be nonnegative")
    return v


def order_stat_weights(n: int, dist: DistortionFn) -> np.ndarray:
    """Weights ``dist(1-(i-1)/n) - dist(1-i/n)`` for ascending order statistics."""
    p = 1.0 - np.arange(n + 1) / n
    p[-1] = 0.0
    return -np.diff(dist.value(p))


def _order_stat_value(v: np.ndarray, util: UtilityFn, dist: DistortionFn) -> float:
    if dist.is_identity:
        return float(np.mean(util.value(v)))
    return float(np.sum(util.value(np.sort(v)) * order_stat_weights(v.size, dist)))


def choquet_order_stat(samples, util: UtilityFn, dist: DistortionFn) -> ChoquetEstimate:
    """Distorted expectation from order statistics.

    The standard error comes from splitting the sample, in its given order,
    into up to 20 folds and taking the spread of the per-fold estimates.
    """
    v = _values(samples)
    value = _order_stat_value(v, util, dist)
    k = min(SPLIT_FOLDS, v.size)
    se = 0.0
    if k >= 2:
        folds = np.array([_order_stat_value(f, util, dist) for f in np.array_split(v, k)])
        se = float(np.std(folds, ddof=1) / np.sqrt(k))
    return ChoquetEstimate(value, se, int(v.size), "order_stat")


def choquet_plugin(samples, util: UtilityFn, dist: DistortionFn) -> ChoquetEstimate:
    """Distorted expectation as ``mean(util(x) * dist'(1 - F(x)))`` with the sample ECDF."""
    v = _values(samples)
    if dist.is_identity:
        terms = util.value(v)
    else:
        terms = util.value(v) * dist.deriv(1.0 - midpoint_ranks(v))
    se = float(np.std(terms, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return ChoquetEstimate(float(np.mean(terms)), se, int(v.size), "plugin")


@dataclass(frozen=True)
class RunningCost:
    """Undistorted running reward ``f(t, u, x)`` with its partials."""

    f: Callable
    f_u: Callable
    f_x: Callable


def wealth_running_cost() -> RunningCost:
    """``f(t, u, x) = x``."""
    return RunningCost(f=lambda t, u, x: np.asarray(x, dtype=float) + 0.0 * u,
                       f_u=lambda t, u, x: np.zeros(np.broadcast(u, x).shape),
                       f_x=lambda t, u, x: np.ones(np.broadcast(u, x).shape))


def _check_paths(X: np.ndarray, u: np.ndarray) -> None:
    if np.any(np.isnan(X)) or np.any(np.isnan(u)):
        raise DataError("paths contain NaN")
    if np.any(X < 0):
        raise DomainError("states must be nonnegative (0 marks an absorbed path)")


def decumulative(part: np.ndarray, degenerate_limit: bool = True) -> np.ndarray:
    """``1 - F(x)`` at each entry of nonnegative cross-sections.

    A 2-D input holds one cross-section per column.  Ranks use the whole
    cross-section, so an atom at zero keeps its mass.  With
    ``degenerate_limit`` a strictly positive sub-sample that is constant
    to machine precision is treated as the top of the law, giving 0 rather
    than the finite-sample ``0.5/n``.
    """
    cols = part if part.ndim == 2 else part[:, None]
    out = np.empty(cols.shape)
    # column blocks bound the ranking temporaries on large ensembles
    for j in range(0, cols.shape[1], RANK_BLOCK):
        block = cols[:, j:j + RANK_BLOCK]
        res = 1.0 - midpoint_ranks(block, axis=0)
        if degenerate_limit:
            pos = block > 0
            hi = np.where(pos, block, -np.inf).max(axis=0)
            lo = np.where(pos, block, np.inf).min(axis=0)
            flat = pos.any(axis=0) & (hi - lo <= 4 * np.finfo(float).eps * hi)
            res[pos & flat[None, :]] = 0.0
        out[:, j:j + RANK_BLOCK] = res
    return out if part.ndim == 2 else out[:, 0]


def transformed_control(u: np.ndarray, X: np.ndarray, control_transform: str) -> np.ndarray:
    if control_transform not in TRANSFORMS:
        raise DomainError(f"unknown control transform {control_transform!r}")
    return u * X if control_transform == "u_times_x" else u


def _part_columns(S: np.ndarray, util: UtilityFn, dist: DistortionFn, sign: float, order: int,
                  degenerate_limit: bool) -> np.ndarray:
    """Per-entry ``util^(order)(part) * dist'(1-F(part))`` with zeros where the part vanishes."""
    part = np.maximum(sign * S, 0.0)
    hit = part > 0
    if not hit.any():
        return np.zeros_like(S)
    safe = np.where(hit, part, 1.0)
    base = util.value(safe) if order == 0 else util.deriv(safe, 1)
    if not dist.is_identity:
        base *= dist.deriv(decumulative(part, degenerate_limit))
    return np.where(hit, base, 0.0)


@dataclass(frozen=True)
class ObjectiveValue:
    running_plus: float
    running_minus: float
    terminal: float
    total: float
    extra_running: float = 0.0
    std_error: float = 0.0
    per_path: np.ndarray | None = field(default=None, repr=False, compare=False)


def evaluate_objective(paths, pref: PreferenceSpec, control_transform: str = "raw_u",
                       extra_f: RunningCost | None = None, *, degenerate_limit: bool = True) -> ObjectiveValue:
    """Prospective objective on a path ensemble.

    Running gains and losses are distorted cross-sectionally at each grid
    time and integrated by the trapezoid rule; the terminal term is the
    plug-in distorted expectation of ``l(X_T)``.  ``per_path`` holds each
    path's contribution, whose mean is ``total``.
    """
    X, u = paths.X, paths.u
    _check_paths(X, u)
    S = transformed_control(u, X, control_transform)
    w = paths.grid.trapezoid_weights()
    plus = _part_columns(S, pref.zeta_plus, pref.varpi_plus, 1.0, 0, degenerate_limit) @ w
    minus = _part_columns(S, pref.zeta_minus, pref.varpi_minus, -1.0, 0, degenerate_limit) @ w
    extra = np.zeros(X.shape[0])
    if extra_f is not None:
        extra = extra_f.f(paths.grid.times[None, :], u, X) @ w
    XT = X[:, -1]
    if pref.terminal_l.is_zero:
        term = np.zeros_like(XT)
    elif pref.terminal_w.is_identity:
        term = pref.terminal_l.value(XT)
    else:
        term = pref.terminal_l.value(XT) * pref.terminal_w.deriv(1.0 - midpoint_ranks(XT))
    rp, rm, te, ex = (float(np.mean(a)) for a in (plus, minus, term, extra))
    per_path = plus - minus + term + extra
    se = float(np.std(per_path, ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    return ObjectiveValue(running_plus=rp, running_minus=rm, terminal=te, total=rp - rm + te + ex,
                          extra_running=ex, std_error=se, per_path=per_path)


@dataclass(frozen=True)
class RunningGradients:
    """Pathwise partials of the running integrand with frozen ranks.

    ``marginal`` is the distorted marginal utility of the transformed
    control; ``h_u`` and ``h_x`` are the full derivatives of the running
    integrand with respect to the control and the state.
    """

    marginal: np.ndarray
    h_u: np.ndarray
    h_x: np.ndarray
    f_u: np.ndarray


def running_gradients(paths, pref: PreferenceSpec, control_transform: str = "raw_u",
                      extra_f: RunningCost | None = None, *, degenerate_limit: bool = True) -> RunningGradients:
    X, u = paths.X, paths.u
    _check_paths(X, u)
    S = transformed_control(u, X, control_transform)
    m = (_part_columns(S, pref.zeta_plus, pref.varpi_plus, 1.0, 1, degenerate_limit)
         + _part_columns(S, pref.zeta_minus, pref.varpi_minus, -1.0, 1, degenerate_limit))
    t = paths.grid.times[None, :]
    f_u = np.zeros_like(X) if extra_f is None else extra_f.f_u(t, u, X)
    f_x = np.zeros_like(X) if extra_f is None else extra_f.f_x(t, u, X)
    if control_transform == "u_times_x":
        return RunningGradients(m, X * m + f_u, u * m + f_x, f_u)
    return RunningGradients(m, m + f_u, f_x, f_u)
