import numpy as np
import pytest

from cptmp.adjoint import solve_adjoint_analytic, solve_adjoint_lsmc, terminal_condition
from cptmp.errors import ConfigError, DomainError, NumericalError
from cptmp.functional import wealth_running_cost
from cptmp.preference import DistortionFn, PreferenceSpec, UtilityFn
from cptmp.scenarios import build_scenario, preset
from cptmp.sde import ControlSpec, PathEnsemble, TimeGrid, example_model, gbm_model, simulate_state

IDENT = DistortionFn.identity()
ZERO = UtilityFn.zero()


def terminal_pref(l, w=IDENT):
    return PreferenceSpec(ZERO, ZERO, l, IDENT, IDENT, w)


def flat_ensemble(XT, steps=10):
    n = len(XT)
    X = np.ones((n, steps + 1))
    X[:, -1] = XT
    return PathEnsemble(grid=TimeGrid(1.0, steps), seed=0, dW=np.zeros((n, steps)), X=X, u=np.zeros_like(X))


def test_terminal_condition_identity_distortion():
    XT = np.array([0.5, 1.0, 4.0])
    pT = terminal_condition(flat_ensemble(XT), terminal_pref(UtilityFn.power(0.5)))
    assert np.array_equal(pT, XT**-0.5)


def test_terminal_condition_constant_state_uses_tie_rank():
    n = 8
    w = DistortionFn.lopes(0.3, 1.0, 0.5)
    pT = terminal_condition(flat_ensemble(np.full(n, 4.0)), terminal_pref(UtilityFn.power(0.5), w))
    assert np.allclose(pT, 0.5 * w.deriv(0.5 / n), rtol=1e-15)


def test_terminal_condition_is_cached_and_frozen():
    ens = flat_ensemble(np.array([1.0, 2.0]))
    pref = terminal_pref(UtilityFn.power(0.5))
    a = terminal_condition(ens, pref)
    assert terminal_condition(ens, pref) is a
    with pytest.raises(ValueError):
        a[0] = 1.0


def test_terminal_condition_domain():
    with pytest.raises(DomainError):
        terminal_condition(flat_ensemble(np.array([-1.0, 2.0])), terminal_pref(UtilityFn.power(0.5)))


def test_analytic_closed_form_and_zero(closed_form):
    ens = closed_form.ensemble
    adj = solve_adjoint_analytic("closed_form", ens)
    i = int(np.argmin(np.abs(ens.times - 0.25)))
    assert np.all(adj.p[:, i] == 0.75) and np.all(adj.q == 0.0)
    zc = build_scenario(preset("zero_control").replace(n_paths=200))
    adj = solve_adjoint_analytic("zero_control", zc.ensemble)
    assert not adj.p.any() and not adj.q.any()


def test_analytic_mismatch_and_missing_params(closed_form):
    with pytest.raises(ConfigError):
        solve_adjoint_analytic("zero_control", closed_form.ensemble)
    with pytest.raises(ConfigError):
        solve_adjoint_analytic("merton", closed_form.ensemble)
    jz = build_scenario(preset("jz_market").replace(n_paths=500))
    with pytest.raises(ConfigError):
        solve_adjoint_analytic("jz_market", jz.ensemble, {"theta": 0.2})


def test_analytic_jz_degenerate_kernel():
    cfg = preset("jz_market").replace(n_paths=400, theta=0.0, b=0.02)
    sc = build_scenario(cfg)
    lam = sc.info["lambda"].lam
    assert np.all(sc.adjoint.q == 0.0)
    assert np.allclose(sc.adjoint.p, lam * np.exp(-cfg.r * sc.ensemble.times)[None, :], rtol=1e-13)


def test_jz_terminal_adjoint_matches_kernel(jz_market):
    lam = jz_market.info["lambda"].lam
    pT = terminal_condition(jz_market.ensemble, jz_market.pref)
    rel = np.abs(pT / (lam * jz_market.ensemble.rho[:, -1]) - 1)
    assert np.max(rel) <= 1e-2


def test_jz_martingale_increments(jz_market):
    ens, adj, m = jz_market.ensemble, jz_market.adjoint, jz_market.model
    t, dt = ens.times, ens.grid.dt
    for i in range(0, ens.grid.steps, 9):
        x, u = ens.X[:, i], ens.u[:, i]
        drift = m.b_x(t[i], u, x) * adj.p[:, i] + m.sigma_x(t[i], u, x) * adj.q[:, i]
        res = adj.p[:, i + 1] - adj.p[:, i] + drift * dt - adj.q[:, i] * ens.dW[:, i]
        se = np.std(res, ddof=1) / np.sqrt(res.size)
        assert abs(res.mean()) <= 3 * se


def test_lsmc_zero_terminal_data():
    ens = simulate_state(example_model(), ControlSpec.constant(0.4), TimeGrid(1.0, 20), 2000, 1.0, 3)
    adj = solve_adjoint_lsmc(ens, example_model(), terminal_pref(ZERO), 3)
    assert np.max(np.abs(adj.p)) <= 1e-10 and np.max(np.abs(adj.q)) <= 1e-10


def test_lsmc_gbm_oracle():
    mu, s, g, T = 0.05, 0.3, 0.5, 1.0
    grid = TimeGrid(T, 50)
    model = gbm_model(mu, s)
    ens = simulate_state(model, ControlSpec.constant(0.0), grid, 50_000, 1.0, 21)
    adj = solve_adjoint_lsmc(ens, model, terminal_pref(UtilityFn.power(g)), 3)
    tau = T - ens.times
    # p_t = E[(X_T / X_t) l'(X_T) | X_t] for the linear adjoint equation
    exact = ens.X ** (g - 1) * np.exp(g * (mu - s**2 / 2) * tau + g**2 * s**2 * tau / 2)
    rel = np.abs(adj.p / exact - 1)
    assert np.quantile(rel[:, :-1], 0.99) <= 5e-2
    assert np.max(np.abs(adj.p[:, -1] - ens.X[:, -1] ** (g - 1))) == 0.0


def test_lsmc_closed_form_matches_analytic(closed_form):
    sc = closed_form
    adj = solve_adjoint_lsmc(sc.ensemble, sc.model, sc.pref, 3, control_transform="u_times_x",
                             extra_f=wealth_running_cost())
    t = sc.ensemble.times
    live = sc.ensemble.X[:, :-1] > 0
    rel = np.abs(adj.p[:, :-1] / (1.0 - t[:-1]) - 1)
    assert np.max(rel[live]) <= 5e-2
    assert adj.diagnostics["max_condition"] < 1e10


def test_lsmc_invariant_to_state_rescaling():
    grid = TimeGrid(1.0, 20)
    model = gbm_model(0.05, 0.3)
    ens = simulate_state(model, ControlSpec.constant(0.0), grid, 4000, 1.0, 5)
    pref = terminal_pref(UtilityFn.custom([(0, 0), (1, 1), (3, 2), (9, 3)]))
    a = solve_adjoint_lsmc(ens, model, pref, 3)
    scaled = ens.replace(X=ens.X * 7.0)
    pref7 = terminal_pref(UtilityFn.custom([(0, 0), (7, 7), (21, 14), (63, 21)]))
    b = solve_adjoint_lsmc(scaled, model, pref7, 3)
    assert np.allclose(a.p, b.p, rtol=1e-8) and np.allclose(a.q, b.q, rtol=1e-8, atol=1e-12)


def test_lsmc_needs_enough_paths():
    ens = simulate_state(gbm_model(0.05, 0.3), ControlSpec.constant(0.0), TimeGrid(1.0, 5), 30, 1.0, 5)
    with pytest.raises(ConfigError):
        solve_adjoint_lsmc(ens, gbm_model(0.05, 0.3), terminal_pref(UtilityFn.power(0.5)), 3)


def test_lsmc_rank_deficiency_reported():
    # two tight clusters: the standardized state is +-1 up to 1e-12, so z^2 duplicates the constant column
    n, steps = 400, 3
    X = np.ones((n, steps + 1))
    X[:, 1] = np.where(np.arange(n) % 2, 1.0, 2.0) * np.exp(np.linspace(-1e-12, 1e-12, n))
    ens = PathEnsemble(grid=TimeGrid(1.0, steps), seed=0, dW=np.full((n, steps), 0.1), X=X, u=np.zeros_like(X))
    with pytest.raises(NumericalError):
        solve_adjoint_lsmc(ens, gbm_model(0.0, 0.2), terminal_pref(UtilityFn.power(0.5)), 3)
