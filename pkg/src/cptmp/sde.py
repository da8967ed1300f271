"""Forward simulation of controlled scalar SDEs under common random numbers.

Paths are generated in fixed-size blocks whose random streams are derived
from ``(seed, stream, block)`` with a counter-based generator, so results do
not depend on how many worker threads fill the blocks.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import DataError, DomainError

BLOCK_PATHS = 2048
FLOOR = 1e-12

#: Named random streams; every consumer of randomness draws from its own.
STREAM_BROWNIAN = 0
STREAM_ODDS = 1
STREAM_REFERENCE = 2


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream, block)``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def _fill_blocks(n_rows: int, fill: Callable[[np.random.Generator, int], np.ndarray], out: np.ndarray,
                 seed: int, stream: int, workers: int) -> np.ndarray:
    n_blocks = -(-n_rows // BLOCK_PATHS)

    def job(b: int) -> None:
        lo = b * BLOCK_PATHS
        hi = min(n_rows, lo + BLOCK_PATHS)
        out[lo:hi] = fill(block_generator(seed, stream, b), hi - lo)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(n_blocks)))
    else:
        for b in range(n_blocks):
            job(b)
    return out


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        if int(self.steps) < 1:
            raise DomainError("grid needs at least one step")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * (self.T / self.steps)
        t[-1] = self.T
        return t

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


def brownian_increments(grid: TimeGrid, n_paths: int, seed: int, *, stream: int = STREAM_BROWNIAN,
                        workers: int = 1) -> np.ndarray:
    """Standard Brownian increments of shape ``(n_paths, steps)``."""
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    sq = np.sqrt(grid.dt)
    out = np.empty((n_paths, grid.steps))
    return _fill_blocks(n_paths, lambda g, m: g.standard_normal((m, grid.steps)) * sq, out,
                        seed, stream, workers)


Coef = Callable[..., Any]


def _const(value: float) -> Coef:
    return lambda t, u, *rest: np.full(np.shape(u), value, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    """Drift and diffusion of ``dX = b(t,u,X) dt + sigma(t,u,X) dW`` with partials.

    ``linear_in_x`` models are given by ``beta(t,u)`` and ``s(t,u)`` with
    ``b = beta*x`` and ``sigma = s*x``; they are simulated exactly in log
    space.  ``tabulated`` models take the six coefficient callables of
    ``(t, u, x)`` directly.
    """

    kind: str
    name: str = "model"
    beta: Coef | None = None
    s: Coef | None = None
    beta_u: Coef | None = None
    s_u: Coef | None = None
    b_fn: Coef | None = None
    sigma_fn: Coef | None = None
    b_x_fn: Coef | None = None
    b_u_fn: Coef | None = None
    sigma_x_fn: Coef | None = None
    sigma_u_fn: Coef | None = None
    zero_at_zero: bool = True
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind == "linear_in_x":
            need = (self.beta, self.s, self.beta_u, self.s_u)
        elif self.kind == "tabulated":
            need = (self.b_fn, self.sigma_fn, self.b_x_fn, self.b_u_fn, self.sigma_x_fn, self.sigma_u_fn)
        else:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if any(f is None for f in need):
            raise DomainError(f"{self.kind} model is missing coefficient functions")

    @classmethod
    def linear(cls, beta: Coef, s: Coef, beta_u: Coef, s_u: Coef, name: str = "linear", **params) -> "ModelSpec":
        return cls("linear_in_x", name=name, beta=beta, s=s, beta_u=beta_u, s_u=s_u, params=params)

    @classmethod
    def tabulated(cls, b: Coef, sigma: Coef, b_x: Coef, b_u: Coef, sigma_x: Coef, sigma_u: Coef,
                  name: str = "tabulated", zero_at_zero: bool = False, **params) -> "ModelSpec":
        return cls("tabulated", name=name, b_fn=b, sigma_fn=sigma, b_x_fn=b_x, b_u_fn=b_u,
                   sigma_x_fn=sigma_x, sigma_u_fn=sigma_u, zero_at_zero=zero_at_zero, params=params)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear_in_x"

    def b(self, t, u, x):
        return self.beta(t, u) * x if self.is_linear else self.b_fn(t, u, x)

    def sigma(self, t, u, x):
        return self.s(t, u) * x if self.is_linear else self.sigma_fn(t, u, x)

    def b_x(self, t, u, x):
        return self.beta(t, u) + 0.0 * x if self.is_linear else self.b_x_fn(t, u, x)

    def b_u(self, t, u, x):
        return self.beta_u(t, u) * x if self.is_linear else self.b_u_fn(t, u, x)

    def sigma_x(self, t, u, x):
        return self.s(t, u) + 0.0 * x if self.is_linear else self.sigma_x_fn(t, u, x)

    def sigma_u(self, t, u, x):
        return self.s_u(t, u) * x if self.is_linear else self.sigma_u_fn(t, u, x)

    def validate(self, times=None, controls=None, states=None, tol: float = 1e-6) -> list[str]:
        """Compare partials against central differences on a small grid.

        Returns a list of human-readable problems (empty when all checks
        pass).  A finite grid cannot certify Lipschitz derivatives, so a
        clean result is heuristic evidence only.
        """
        t = np.asarray([0.0, 0.3, 0.7] if times is None else times, dtype=float)
        u = np.asarray([-1.0, -0.2, 0.3, 1.1] if controls is None else controls, dtype=float)
        x = np.asarray([0.5, 1.0, 2.0] if states is None else states, dtype=float)
        T, U, X = np.meshgrid(t, u, x, indexing="ij")
        problems = []
        h = 1e-5
        pairs = [
            ("b_x", self.b_x(T, U, X), (self.b(T, U, X + h) - self.b(T, U, X - h)) / (2 * h)),
            ("b_u", self.b_u(T, U, X), (self.b(T, U + h, X) - self.b(T, U - h, X)) / (2 * h)),
            ("sigma_x", self.sigma_x(T, U, X), (self.sigma(T, U, X + h) - self.sigma(T, U, X - h)) / (2 * h)),
            ("sigma_u", self.sigma_u(T, U, X), (self.sigma(T, U + h, X) - self.sigma(T, U - h, X)) / (2 * h)),
        ]
        for name, exact, fd in pairs:
            err = np.max(np.abs(np.asarray(exact) - fd) / np.maximum(1.0, np.abs(fd)))
            if err > tol:
                problems.append(f"{name} disagrees with central differences (max rel err {err:.2e})")
        if self.zero_at_zero:
            zb = np.max(np.abs(self.b(T, U, 0.0 * X)))
            zs = np.max(np.abs(self.sigma(T, U, 0.0 * X)))
            if zb != 0.0 or zs != 0.0:
                problems.append("coefficients do not vanish at x = 0")
        return problems


def example_model() -> ModelSpec:
    """``dX = -u X dt + X dW``: a stake ``u`` drains wealth at rate ``u``."""
    return ModelSpec.linear(beta=lambda t, u: -np.asarray(u, dtype=float),
                            s=_const(1.0), beta_u=_const(-1.0), s_u=_const(0.0), name="stake_drain")


def market_model(r: float, b: float, sigma: float) -> ModelSpec:
    """Self-financing wealth with fraction ``u`` in one stock."""
    return ModelSpec.linear(beta=lambda t, u: r + (b - r) * np.asarray(u, dtype=float),
                            s=lambda t, u: sigma * np.asarray(u, dtype=float),
                            beta_u=_const(b - r), s_u=_const(sigma), name="market", r=r, b=b, sigma=sigma)


def gbm_model(mu: float, vol: float) -> ModelSpec:
    """Control-free geometric Brownian motion."""
    return ModelSpec.linear(beta=_const(mu), s=_const(vol), beta_u=_const(0.0), s_u=_const(0.0),
                            name="gbm", mu=mu, vol=vol)


@dataclass(frozen=True)
class ControlSpec:
    """Control law: constant, deterministic (on the grid), or feedback ``g(t, x)``.

    Deterministic values have shape ``(steps+1,)`` or ``(n_paths, steps+1)``.
    The admissible set is the interval ``[lower, upper]``.
    """

    kind: str
    value: Any
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.kind not in ("constant", "deterministic", "feedback"):
            raise DomainError(f"unknown control kind {self.kind!r}")
        if self.kind == "feedback" and not callable(self.value):
            raise DomainError("feedback control needs a callable g(t, x)")
        if not self.lower <= self.upper:
            raise DomainError("control set must be a non-empty interval")

    @classmethod
    def constant(cls, u0: float, lower: float = -np.inf, upper: float = np.inf) -> "ControlSpec":
        return cls("constant", float(u0), lower, upper)

    @classmethod
    def deterministic(cls, values, lower: float = -np.inf, upper: float = np.inf) -> "ControlSpec":
        return cls("deterministic", np.asarray(values, dtype=float), lower, upper)

    @classmethod
    def feedback(cls, g: Callable, lower: float = -np.inf, upper: float = np.inf) -> "ControlSpec":
        return cls("feedback", g, lower, upper)

    def check_grid(self, grid: TimeGrid, n_paths: int) -> None:
        if self.kind == "deterministic":
            shape = np.shape(self.value)
            if shape not in ((grid.steps + 1,), (n_paths, grid.steps + 1)):
                raise DataError(f"deterministic control shape {shape} does not match the grid")

    def at(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            u = np.full(np.shape(x), self.value)
        elif self.kind == "deterministic":
            v = self.value
            u = np.full(np.shape(x), v[i]) if v.ndim == 1 else v[:, i].copy()
        else:
            u = np.asarray(self.value(t, x), dtype=float) * np.ones(np.shape(x))
        if np.any(np.isnan(u)):
            raise DataError(f"control is NaN at grid index {i}")
        if np.any((u < self.lower) | (u > self.upper)):
            raise DomainError(f"control leaves the admissible interval [{self.lower}, {self.upper}] at index {i}")
        return u

    def on_paths(self, grid: TimeGrid, X: np.ndarray) -> np.ndarray:
        """Evaluate along given state paths; shape ``(n_paths, steps+1)``."""
        self.check_grid(grid, X.shape[0])
        t = grid.times
        return np.stack([self.at(i, t[i], X[:, i]) for i in range(grid.steps + 1)], axis=1)


@dataclass(frozen=True)
class PathEnsemble:
    """Monte Carlo paths on a shared grid.

    ``dW`` has shape ``(n, steps)``; ``X``, ``u``, ``Z``, ``rho`` have shape
    ``(n, steps+1)``.  A state of exactly 0 marks an absorbed path.
    """

    grid: TimeGrid
    seed: int
    dW: np.ndarray
    X: np.ndarray
    u: np.ndarray
    Z: np.ndarray | None = None
    rho: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n, m = self.dW.shape
        if m != self.grid.steps:
            raise DataError("Brownian increments do not match the grid")
        for name in ("X", "u", "Z", "rho"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n, m + 1):
                raise DataError(f"{name} has shape {arr.shape}, expected {(n, m + 1)}")

    @property
    def n_paths(self) -> int:
        return int(self.dW.shape[0])

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def W(self) -> np.ndarray:
        W = np.zeros((self.n_paths, self.grid.steps + 1))
        np.cumsum(self.dW, axis=1, out=W[:, 1:])
        return W

    @property
    def alive(self) -> np.ndarray:
        return self.X > 0

    def replace(self, **changes) -> "PathEnsemble":
        changes.setdefault("cache", {})
        return dataclasses.replace(self, **changes)


def simulate_state(model: ModelSpec, control: ControlSpec, grid: TimeGrid, n_paths: int, x0: float,
                   seed: int, *, dW: np.ndarray | None = None, base: PathEnsemble | None = None,
                   workers: int = 1) -> PathEnsemble:
    """Simulate the controlled state.

    Linear models use the exact log scheme.  With ``base`` (a linear-model
    ensemble on the same increments) the state is propagated relative to the
    base path, ``X = Xbase * exp(L)``, where ``L`` accumulates the difference
    of log increments; this keeps a perturbed ensemble bit-identical to its
    base wherever the controls coincide, and stays consistent when the base
    was built from a closed form rather than the scheme.
    Tabulated models use a Heun drift with Euler diffusion, reflected at 0
    and floored at ``FLOOR``.
    """
    if not x0 > 0:
        raise DomainError("initial state must be positive")
    if base is not None:
        dW = base.dW
        n_paths = base.n_paths
        grid = base.grid
        seed = base.seed
    if dW is None:
        dW = brownian_increments(grid, n_paths, seed, workers=workers)
    elif dW.shape != (n_paths, grid.steps):
        raise DataError("supplied increments do not match (n_paths, steps)")
    control.check_grid(grid, n_paths)
    t = grid.times
    dt = grid.dt
    N = grid.steps
    X = np.empty((n_paths, N + 1))
    U = np.empty((n_paths, N + 1))
    X[:, 0] = x0
    diag = {}
    if model.is_linear and base is not None:
        if not base.X[0, 0] == x0:
            raise DataError("relative simulation needs the base ensemble's initial state")
        L = np.zeros(n_paths)
        with np.errstate(invalid="ignore", over="ignore"):
            for i in range(N + 1):
                X[:, i] = base.X[:, i] * np.exp(L) if i else x0
                U[:, i] = control.at(i, t[i], X[:, i])
                if i == N:
                    break
                ub = base.u[:, i]
                s_new, s_old = model.s(t[i], U[:, i]), model.s(t[i], ub)
                L = L + ((model.beta(t[i], U[:, i]) - model.beta(t[i], ub)
                          - 0.5 * (s_new**2 - s_old**2)) * dt + (s_new - s_old) * dW[:, i])
        X[base.X == 0.0] = 0.0
    elif model.is_linear:
        for i in range(N):
            U[:, i] = control.at(i, t[i], X[:, i])
            sv = model.s(t[i], U[:, i])
            X[:, i + 1] = X[:, i] * np.exp((model.beta(t[i], U[:, i]) - 0.5 * sv**2) * dt + sv * dW[:, i])
        U[:, N] = control.at(N, t[N], X[:, N])
        diag["floor_hits"] = 0
    else:
        hits = 0
        for i in range(N):
            x = X[:, i]
            u = control.at(i, t[i], x)
            U[:, i] = u
            b0 = model.b(t[i], u, x)
            diff = model.sigma(t[i], u, x) * dW[:, i]
            pred = x + b0 * dt + diff
            nxt = x + 0.5 * (b0 + model.b(t[i + 1], u, pred)) * dt + diff
            low = nxt < FLOOR
            hits += int(np.count_nonzero(low))
            X[:, i + 1] = np.where(low, np.maximum(np.abs(nxt), FLOOR), nxt)
        U[:, N] = control.at(N, t[N], X[:, N])
        diag["floor_hits"] = hits
    if np.any(np.isnan(X)):
        raise DataError("state simulation produced NaN")
    return PathEnsemble(grid=grid, seed=seed, dW=dW, X=X, u=U, diagnostics=diag,
                        meta={"model": model.name})


def direction_values(direction, ensemble: PathEnsemble) -> np.ndarray:
    """Direction ``v`` as an ``(n, steps+1)`` array along the ensemble's states."""
    if isinstance(direction, ControlSpec):
        return direction.on_paths(ensemble.grid, ensemble.X)
    v = np.asarray(direction, dtype=float)
    shape = (ensemble.n_paths, ensemble.grid.steps + 1)
    if v.ndim == 0:
        return np.full(shape, float(v))
    if v.shape == (shape[1],):
        return np.broadcast_to(v, shape).copy()
    if v.shape != shape:
        raise DataError(f"direction shape {v.shape} does not match the ensemble {shape}")
    return v


def simulate_variational(ensemble: PathEnsemble, model: ModelSpec, direction, *,
                         growth: str = "realized") -> PathEnsemble:
    """First-order sensitivity ``Z`` of the state to the control along ``v``.

    For linear models ``Z`` is the exact derivative of the relative scheme:
    ``Z[i+1] = G[i] Z[i] + X[i] G[i] v[i] ((beta_u - s s_u) dt + s_u dW)``.
    ``growth="realized"`` uses ``G = X[i+1]/X[i]`` (the tangent of the
    relative scheme used for perturbed re-simulation); ``growth="scheme"``
    uses the one-step lognormal factor of the exact scheme with the
    ensemble's controls.  The two agree on scheme-generated ensembles.
    Absorbed states carry ``Z = 0``.
    """
    if growth not in ("realized", "scheme"):
        raise DomainError(f"unknown growth mode {growth!r}")
    v = direction_values(direction, ensemble)
    grid, X, U, dW = ensemble.grid, ensemble.X, ensemble.u, ensemble.dW
    n, N = dW.shape
    t = grid.times
    dt = grid.dt
    Z = np.zeros((n, N + 1))
    if model.is_linear:
        for i in range(N):
            alive = X[:, i] > 0
            if growth == "realized":
                G = np.divide(X[:, i + 1], X[:, i], out=np.zeros(n), where=alive)
            else:
                sv = model.s(t[i], U[:, i])
                G = np.where(alive, np.exp((model.beta(t[i], U[:, i]) - 0.5 * sv**2) * dt + sv * dW[:, i]), 0.0)
            su = model.s_u(t[i], U[:, i])
            force = (model.beta_u(t[i], U[:, i]) - model.s(t[i], U[:, i]) * su) * dt + su * dW[:, i]
            Z[:, i + 1] = G * Z[:, i] + X[:, i] * G * v[:, i] * force
    else:
        for i in range(N):
            x, u, z, vi = X[:, i], U[:, i], Z[:, i], v[:, i]
            b0 = model.b(t[i], u, x)
            diff = model.sigma(t[i], u, x) * dW[:, i]
            pred = x + b0 * dt + diff
            dz_diff = (model.sigma_x(t[i], u, x) * z + model.sigma_u(t[i], u, x) * vi) * dW[:, i]
            dz0 = model.b_x(t[i], u, x) * z + model.b_u(t[i], u, x) * vi
            zpred = z + dz0 * dt + dz_diff
            dz1 = model.b_x(t[i + 1], u, pred) * zpred + model.b_u(t[i + 1], u, pred) * vi
            Z[:, i + 1] = z + 0.5 * (dz0 + dz1) * dt + dz_diff
    return ensemble.replace(Z=Z, cache=ensemble.cache)


def simulate_pricing_kernel(grid: TimeGrid, r: float, theta: float, dW: np.ndarray) -> np.ndarray:
    """State-price density ``rho`` on the grid, exact per step, ``rho_0 = 1``."""
    if dW.shape[1] != grid.steps:
        raise DataError("Brownian increments do not match the grid")
    n = dW.shape[0]
    logr = np.zeros((n, grid.steps + 1))
    np.cumsum(-(r + 0.5 * theta**2) * grid.dt - theta * dW, axis=1, out=logr[:, 1:])
    return np.exp(logr)
