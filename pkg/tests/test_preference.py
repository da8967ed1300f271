import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cptmp.errors import ConfigError, DomainError
from cptmp.preference import (DistortionFn, PreferenceSpec, UtilityFn, distortion_eval, utility_deriv,
                              utility_deriv_inverse, utility_eval, validate_preference)

lopes_params = st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 3.0), st.floats(0.0, 3.0))


def valid_spec():
    u = UtilityFn.power(0.5)
    w = DistortionFn.lopes(0.5, 1.0, 1.0)
    return PreferenceSpec(u, u, u, w, w, w)


@pytest.mark.parametrize("gamma, x, expected", [(0.5, 4.0, 4.0), (0.5, 0.0, 0.0), (0.25, 1.0, 4.0)])
def test_utility_eval(gamma, x, expected):
    assert utility_eval(UtilityFn.power(gamma), x) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("x, order, expected", [(4.0, 1, 0.5), (1.0, 2, -0.5)])
def test_utility_deriv(x, order, expected):
    assert utility_deriv(UtilityFn.power(0.5), x, order) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("gamma, y, expected", [(0.5, 0.5, 4.0), (0.5, 1.0, 1.0), (0.25, 8.0, 0.0625)])
def test_utility_deriv_inverse(gamma, y, expected):
    assert utility_deriv_inverse(UtilityFn.power(gamma), y) == pytest.approx(expected, rel=1e-12)


def test_utility_domain_errors():
    f = UtilityFn.power(0.5)
    with pytest.raises(DomainError):
        utility_eval(f, -1.0)
    with pytest.raises(DomainError):
        utility_deriv(f, 0.0)
    with pytest.raises(DomainError):
        utility_deriv(f, 1e-301)
    with pytest.raises(DomainError):
        utility_deriv_inverse(f, 0.0)
    with pytest.raises(DomainError):
        UtilityFn.power(1.5)


def test_derivatives_diverge_towards_zero():
    f = UtilityFn.power(0.5)
    vals = f.deriv(np.array([1e-2, 1e-6, 1e-12, 1e-299]))
    assert np.all(np.diff(vals) > 0) and vals[-1] > 1e149


@pytest.mark.parametrize("p, deriv, expected", [(0.5, 0, 0.5), (0.0, 1, 1.0)])
def test_lopes_values(p, deriv, expected):
    assert distortion_eval(DistortionFn.lopes(0.5, 1.0, 1.0), p, deriv) == pytest.approx(expected, abs=1e-15)


def test_identity_distortion_derivative():
    assert np.all(distortion_eval(DistortionFn.identity(), np.linspace(0, 1, 11), 1) == 1.0)


def test_distortion_domain():
    with pytest.raises(DomainError):
        distortion_eval(DistortionFn.lopes(0.5, 1, 1), 1.2)
    with pytest.raises(DomainError):
        distortion_eval(DistortionFn.identity(), -0.1, 1)


@given(lopes_params)
def test_lopes_endpoints_exact(params):
    g = DistortionFn.lopes(*params)
    assert g.value(0.0) == 0.0 and g.value(1.0) == 1.0


@settings(max_examples=30, deadline=None)
@given(lopes_params)
def test_lopes_derivative_integrates_to_one(params):
    g = DistortionFn.lopes(*params)
    p = np.linspace(0.0, 1.0, 10_001)
    d = g.deriv(p)
    integral = float(np.sum((d[1:] + d[:-1]) / 2) * (p[1] - p[0]))
    if params[1] >= 1 and params[2] >= 1:
        # smooth integrand: trapezoid error is O(h^2)
        assert integral == pytest.approx(1.0, abs=1e-8)
    else:
        assert integral == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(lopes_params)
def test_lopes_derivative_matches_finite_differences(params):
    g = DistortionFn.lopes(*params)
    p = np.linspace(0.01, 0.99, 100)
    h = 1e-6
    fd = (g.value(p + h) - g.value(p - h)) / (2 * h)
    assert np.allclose(g.deriv(p), fd, atol=1e-6 * max(1.0, float(np.max(np.abs(fd)))))


@settings(deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-6, 6))
def test_deriv_inverse_roundtrip(gamma, logx):
    f = UtilityFn.power(gamma)
    x = 10.0**logx
    assert utility_deriv_inverse(f, utility_deriv(f, x)) == pytest.approx(x, rel=1e-10)


def test_custom_utility_is_monotone_cubic():
    f = UtilityFn.custom([(0, 0), (1, 1), (2, 1.5), (4, 2)])
    x = np.linspace(0, 6, 61)
    v = f.value(x)
    assert np.all(np.diff(v) > 0)
    assert f.value(6.0) == pytest.approx(2.0 + 2.0 * float(f.deriv(4.0)))
    assert f.deriv_inverse(float(f.deriv(1.5))) == pytest.approx(1.5, rel=1e-8)


def test_validate_clean_spec():
    rep = validate_preference(valid_spec(), 201)
    assert rep.ok and rep.violations == []


def test_validate_flags_distortion_endpoint():
    bad = DistortionFn.tabulated([(0, 0), (0.5, 0.4), (1, 0.9)])
    spec = PreferenceSpec(*[UtilityFn.power(0.5)] * 3, bad, bad, bad)
    rep = validate_preference(spec, 51)
    assert "endpoint value(1)≠1" in rep.properties()
    hits = [v for v in rep.violations if v.prop == "endpoint value(1)≠1"]
    assert {v.component for v in hits} == {"varpi_plus", "varpi_minus", "terminal_w"}
    assert all(v.point == 1.0 for v in hits)


def test_validate_flags_decreasing_utility():
    dec = UtilityFn.custom([(0, 0), (1, 1), (2, 0.5)])
    w = DistortionFn.identity()
    rep = validate_preference(PreferenceSpec(dec, UtilityFn.power(0.5), UtilityFn.power(0.5), w, w, w), 41)
    mono = [v for v in rep.violations if v.prop == "monotonicity"]
    assert mono and mono[0].component == "zeta_plus" and 1.0 < mono[0].point <= 2.0


def test_validate_flags_convex_utility_and_warns_on_inada():
    convex = UtilityFn.custom([(0, 0), (1, 1), (2, 3)])
    w = DistortionFn.identity()
    rep = validate_preference(PreferenceSpec(convex, UtilityFn.power(0.5), UtilityFn.power(0.5), w, w, w))
    assert "concavity" in rep.properties()
    assert any(v.prop == "inada" for v in rep.warnings)


def test_validate_rejects_tiny_grid():
    with pytest.raises(DomainError):
        validate_preference(valid_spec(), 1)


def test_preference_from_config_roundtrip():
    spec = valid_spec()
    again = PreferenceSpec.from_config(spec.to_dict())
    assert again == spec
    partial = PreferenceSpec.from_config({"terminal_w": {"kind": "tabulated", "knots": "0:0,0.5:0.7,1:1"}}, spec)
    assert partial.terminal_w.kind == "tabulated" and partial.zeta_plus == spec.zeta_plus


@pytest.mark.parametrize("entries", [
    {"zeta_plus": {"kind": "exp"}},
    {"zeta_plus": {"kind": "power"}},
    {"varpi_plus": {"kind": "lopes", "nu": "x", "a": 1, "b": 1}},
    {"bogus": {"kind": "identity"}},
])
def test_preference_from_config_errors(entries):
    with pytest.raises(ConfigError):
        PreferenceSpec.from_config(entries, valid_spec())
