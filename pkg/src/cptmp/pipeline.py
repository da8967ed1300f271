"""Scenario pipelines and verification suites behind the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import functional
from .adjoint import solve_adjoint_lsmc
from .config import DEFAULT_TOLERANCES
from .empirical import build_ecdf, ks_threshold, ks_uniformity, midpoint_ranks, pit_transform
from .functional import choquet_order_stat, choquet_plugin, evaluate_objective, wealth_running_cost
from .maximum_principle import duality_check, gateaux_fd, mp_residual
from .preference import DistortionFn, UtilityFn
from .scenarios import (ANALYTIC_IDS, Scenario, ScenarioConfig, build_scenario, evaluate_intro_objectives,
                        kernel_cdf, preset)
from .sde import (STREAM_REFERENCE, ControlSpec, TimeGrid, brownian_increments, example_model, gbm_model,
                  simulate_state, simulate_variational)

SUITES = ("all", "pit", "duality", "gateaux", "residual")
ZERO_CONTROL_CANDIDATES = (0.1, -0.1, 0.5, -0.5, 1.0, -1.0)
GATEAUX_CONSTANT = 0.5
PIT_REFERENCE_FACTOR = 10
PIT_STEPS = 10


@dataclass
class Check:
    """One named pass/fail line of a verification table."""

    suite: str
    scenario: str
    name: str
    value: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def verification_direction(sc: Scenario, size: float = 0.1) -> np.ndarray:
    """``size`` where the candidate control is active, or everywhere when it is identically 0."""
    if np.any(sc.ensemble.u != 0):
        return sc.default_direction(size)
    return np.full(sc.ensemble.u.shape, size)


def _tol(tolerances: dict | None) -> dict:
    out = dict(DEFAULT_TOLERANCES)
    out.update(tolerances or {})
    return out


def _mp_tolerance(tol: dict) -> float | None:
    return None if tol["mp_rms"] == DEFAULT_TOLERANCES["mp_rms"] else tol["mp_rms"]


def run_scenario(cfg: ScenarioConfig, tolerances: dict | None = None, *, workers: int = 1):
    """Simulate, solve the adjoint, then run the residual, Gateaux and duality checks.

    Returns ``(report, summary_row, ensemble)``.  Evaluation-only scenarios
    report the objective and nothing else.
    """
    tol = _tol(tolerances)
    k = tol["se_multiple"]
    if cfg.id not in ANALYTIC_IDS:
        value = evaluate_intro_objectives(cfg, workers=workers)
        obj = {k_: getattr(value, k_) for k_ in ("running_plus", "running_minus", "terminal", "extra_running",
                                                 "total", "std_error")}
        report = {"scenario": cfg.to_dict(), "objective": obj, "verdict": "evaluated"}
        row = {"scenario": cfg.id, "n_paths": cfg.n_paths, "steps": cfg.steps, "seed": cfg.seed,
               "J_total": value.total, "verdict": "evaluated"}
        return report, row, None

    sc = build_scenario(cfg, workers=workers)
    ens = sc.ensemble
    J = evaluate_objective(ens, sc.pref, sc.transform, sc.extra_f)
    mp = mp_residual(ens, sc.adjoint, sc.model, sc.pref, sc.transform, sc.extra_f, tolerance=_mp_tolerance(tol))
    v = verification_direction(sc)
    if np.any(ens.u != 0):
        gat = gateaux_fd(None, v, sc.model, sc.pref, ens.grid, ens.n_paths, cfg.seed, control_transform=sc.transform,
                         extra_f=sc.extra_f, base=ens)
        gat_ok = gat.consistent(tol["gateaux_rel"], k)
        gat_d = {**gat.to_dict(), "consistent": gat_ok}
    else:
        gat, gat_ok, gat_d = None, True, {"skipped": "candidate control is identically zero"}
    ens_z = simulate_variational(ens, sc.model, v)
    dual = duality_check(ens_z, sc.adjoint, sc.model, v, sc.pref, sc.transform, sc.extra_f)
    dual_ok = dual.holds(k)
    passed = mp.verdict == "consistent" and gat_ok and dual_ok
    verdict = "consistent" if passed else "violated"
    report = {
        "scenario": cfg.to_dict(),
        "objective": {"total": J.total, "std_error": J.std_error, "running_plus": J.running_plus,
                      "running_minus": J.running_minus, "terminal": J.terminal, "extra_running": J.extra_running},
        "adjoint": {"method": sc.adjoint.method, "basis_degree": sc.adjoint.basis_degree,
                    "diagnostics": sc.adjoint.diagnostics},
        "mp_residual": {"overall_rms": mp.overall_rms, "pooled_se": mp.pooled_se, "tolerance": mp.tolerance,
                        "excluded_fraction": mp.excluded_fraction, "verdict": mp.verdict,
                        "per_time": mp.per_time()},
        "gateaux": gat_d,
        "duality": {**dual.to_dict(), "holds": dual_ok},
        "diagnostics": ens.diagnostics,
        "verdict": verdict,
    }
    row = {"scenario": cfg.id, "n_paths": cfg.n_paths, "steps": cfg.steps, "seed": cfg.seed, "J_total": J.total,
           "mp_rms": mp.overall_rms, "gateaux_gap": gat.abs_gap if gat is not None else 0.0,
           "duality_gap": dual.gap, "verdict": verdict}
    return report, row, ens_z


# ---------------------------------------------------------------- suites

def _scenario_cfg(sid: str, seed: int, n_paths: int | None, steps: int | None, overrides: dict) -> ScenarioConfig:
    cfg = preset(sid).replace(seed=seed, **overrides)
    if n_paths is not None:
        cfg = cfg.replace(n_paths=n_paths)
    if steps is not None:
        cfg = cfg.replace(steps=steps)
    return cfg


class _Builds:
    """Scenario builds shared between suites of one verify invocation."""

    def __init__(self, seed, n_paths, steps, workers, overrides=None):
        self.seed, self.n_paths, self.steps, self.workers = seed, n_paths, steps, workers
        self.overrides = overrides or {}
        self._cache: dict = {}

    def config(self, sid: str, **extra) -> ScenarioConfig:
        return _scenario_cfg(sid, self.seed, self.n_paths, self.steps, {**self.overrides, **extra})

    def get(self, sid: str, **extra) -> Scenario:
        key = (sid, tuple(sorted(extra.items())))
        if key not in self._cache:
            self._cache[key] = build_scenario(self.config(sid, **extra), workers=self.workers)
        return self._cache[key]


def suite_estimators(builds: _Builds, tol: dict) -> list[Check]:
    """Weight telescoping and the two-point estimator oracle."""
    checks = []
    sq = DistortionFn.lopes(1.0, 1.0, 0.0)
    for n in (1, 2, 7, 1000):
        w = functional.order_stat_weights(n, sq)
        err = abs(float(w.sum()) - 1.0)
        checks.append(Check("estimators", "-", f"telescoping n={n}", err, 1e-12, err <= 1e-12))
    util = UtilityFn.power(0.5, 0.5)
    for est in (choquet_order_stat, choquet_plugin):
        val = est([1.0, 4.0], util, sq).value
        err = abs(val - 1.25)
        checks.append(Check("estimators", "-", f"two-point oracle {est.__name__}", err, 1e-12, err <= 1e-12,
                            {"value": val}))
    return checks


def suite_pit(builds: _Builds, tol: dict) -> list[Check]:
    """Uniformity of the empirical PIT for GBM and the pricing-kernel identity."""
    checks = []
    cfg = builds.config("jz_market")
    n = cfg.n_paths
    grid = TimeGrid(cfg.T, PIT_STEPS)
    model = gbm_model(cfg.b, cfg.sigma)
    ens = simulate_state(model, ControlSpec.constant(0.0), grid, n, cfg.x0, cfg.seed, workers=builds.workers)
    thr = ks_threshold(n)
    ks_in = ks_uniformity(midpoint_ranks(ens.X[:, -1]))
    checks.append(Check("pit", "gbm", "in-sample KS", ks_in, thr, ks_in <= thr))
    ref_dW = brownian_increments(grid, PIT_REFERENCE_FACTOR * n, cfg.seed, stream=STREAM_REFERENCE,
                                 workers=builds.workers)
    ref = simulate_state(model, ControlSpec.constant(0.0), grid, ref_dW.shape[0], cfg.x0, cfg.seed, dW=ref_dW)
    ks_out = ks_uniformity(pit_transform(build_ecdf(ref.X[:, -1]), ens.X[:, -1]))
    # the reference ECDF carries its own error of order 1/sqrt(10 n)
    thr_out = thr + 1.63 / np.sqrt(ref_dW.shape[0])
    checks.append(Check("pit", "gbm", "holdout KS", ks_out, thr_out, ks_out <= thr_out,
                        {"reference_paths": int(ref_dW.shape[0])}))
    sc = builds.get("jz_market")
    rho_T, X_T = sc.ensemble.rho[:, -1], sc.ensemble.X[:, -1]
    F_rho = kernel_cdf(rho_T, cfg.r, cfg.theta, cfg.T)
    ks_jz = float(np.max(np.abs(F_rho - (1.0 - midpoint_ranks(X_T)))))
    checks.append(Check("pit", "jz_market", "anti-monotone PIT", ks_jz, tol["ks_jz"], ks_jz <= tol["ks_jz"]))
    return checks


def suite_duality(builds: _Builds, tol: dict) -> list[Check]:
    checks = []
    k = tol["se_multiple"]
    for sid in ANALYTIC_IDS:
        sc = builds.get(sid)
        v = verification_direction(sc)
        ens = simulate_variational(sc.ensemble, sc.model, v)
        d = duality_check(ens, sc.adjoint, sc.model, v, sc.pref, sc.transform, sc.extra_f)
        checks.append(Check("duality", sid, "duality gap", d.gap, k * d.std_error, d.holds(k), d.to_dict()))
    return checks


def suite_gateaux(builds: _Builds, tol: dict) -> list[Check]:
    checks = []
    k, rel = tol["se_multiple"], tol["gateaux_rel"]
    sc = builds.get("closed_form")
    ens = sc.ensemble
    g = gateaux_fd(None, sc.default_direction(0.1), sc.model, sc.pref, ens.grid, ens.n_paths, ens.seed,
                   control_transform=sc.transform, extra_f=sc.extra_f, base=ens)
    checks.append(Check("gateaux", "closed_form", "stationary at the optimum", abs(g.analytic), k * g.analytic_se,
                        g.stationary(k), g.to_dict()))
    checks.append(Check("gateaux", "closed_form", "FD vs analytic at the optimum", g.abs_gap,
                        max(k * g.gap_se, rel * abs(g.analytic)), g.consistent(rel, k), g.to_dict()))
    cfg = sc.config
    g = gateaux_fd(ControlSpec.constant(GATEAUX_CONSTANT, lower=0.0), 0.1, example_model(), sc.pref, cfg.grid,
                   cfg.n_paths, cfg.seed, x0=cfg.x0, control_transform=sc.transform, extra_f=wealth_running_cost(),
                   workers=builds.workers)
    checks.append(Check("gateaux", "closed_form", f"FD vs analytic at u={GATEAUX_CONSTANT}", g.abs_gap,
                        max(k * g.gap_se, rel * abs(g.analytic)), g.consistent(rel, k), g.to_dict()))
    zc = builds.config("zero_control")
    g = gateaux_fd(ControlSpec.constant(GATEAUX_CONSTANT), 0.1, example_model(), zc.preference(), zc.grid,
                   zc.n_paths, zc.seed, x0=zc.x0, workers=builds.workers)
    checks.append(Check("gateaux", "zero_control", f"FD vs analytic at u={GATEAUX_CONSTANT}", g.abs_gap,
                        max(k * g.gap_se, rel * abs(g.analytic)), g.consistent(rel, k), g.to_dict()))
    sc = builds.get("jz_market")
    ens = sc.ensemble
    g = gateaux_fd(None, sc.default_direction(0.1), sc.model, sc.pref, ens.grid, ens.n_paths, ens.seed,
                   control_transform=sc.transform, extra_f=sc.extra_f, base=ens)
    checks.append(Check("gateaux", "jz_market", "FD vs analytic at the optimum", g.abs_gap,
                        max(k * g.gap_se, rel * abs(g.analytic)), g.consistent(rel, k), g.to_dict()))
    return checks


def suite_residual(builds: _Builds, tol: dict) -> list[Check]:
    checks = []
    mp_tol = _mp_tolerance(tol)
    sc = builds.get("closed_form")
    mp = mp_residual(sc.ensemble, sc.adjoint, sc.model, sc.pref, sc.transform, sc.extra_f, tolerance=mp_tol)
    checks.append(Check("residual", "closed_form", "residual RMS", mp.overall_rms, mp.tolerance,
                        mp.verdict == "consistent"))
    sc = builds.get("jz_market")
    adj, cfg = sc.adjoint, sc.config
    drift = float(np.max(np.abs(adj.p * (cfg.b - cfg.r) + cfg.sigma * adj.q)))
    checks.append(Check("residual", "jz_market", "drift identity", drift, tol["drift_identity"],
                        drift <= tol["drift_identity"]))
    mp = mp_residual(sc.ensemble, adj, sc.model, sc.pref, sc.transform, sc.extra_f, tolerance=mp_tol)
    checks.append(Check("residual", "jz_market", "residual RMS", mp.overall_rms, mp.tolerance,
                        mp.verdict == "consistent"))
    for u0 in ZERO_CONTROL_CANDIDATES:
        # built once and dropped: caching six full ensembles would dominate memory
        sc = build_scenario(builds.config("zero_control", control_value=u0), workers=builds.workers)
        adj = solve_adjoint_lsmc(sc.ensemble, sc.model, sc.pref, 3)
        size = float(max(np.max(np.abs(adj.p)), np.max(np.abs(adj.q))))
        checks.append(Check("residual", "zero_control", f"LSMC adjoint vanishes at u={u0}", size, tol["lsmc_zero"],
                            size <= tol["lsmc_zero"]))
        mp = mp_residual(sc.ensemble, adj, sc.model, sc.pref, sc.transform, sc.extra_f, tolerance=mp_tol)
        checks.append(Check("residual", "zero_control", f"violated at u={u0}", mp.overall_rms, mp.tolerance,
                            mp.verdict == "violated"))
    return checks


SUITE_FUNCS = {"pit": suite_pit, "duality": suite_duality, "gateaux": suite_gateaux, "residual": suite_residual}


def run_suite(suite: str, seed: int, *, n_paths: int | None = None, steps: int | None = None,
              tolerances: dict | None = None, workers: int = 1, overrides: dict | None = None) -> list[Check]:
    """Run one named suite (or ``all``) across the preset scenarios."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    tol = _tol(tolerances)
    builds = _Builds(seed, n_paths, steps, workers, overrides)
    names = list(SUITE_FUNCS) if suite == "all" else [suite]
    checks = suite_estimators(builds, tol) if suite == "all" else []
    for name in names:
        checks += SUITE_FUNCS[name](builds, tol)
    return checks
