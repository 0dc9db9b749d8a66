import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from reflected_ldp.fluid import (equilibria, equilibria_s0is1, equilibria_siv, integrate,
                                 integrate_backward, integrate_rescaled, jacobian,
                                 s0is1_equilibria_bisection, siv_quadratic)
from reflected_ldp.model_core import (ReactionNetwork, S0is1Params, SivParams, build_s0is1,
                                      build_siv, drift)


# ---- integration ---------------------------------------------------------

def test_equilibrium_start_stays_put(s0is1):
    _, net, eq = s0is1
    sol = integrate(net, eq.endemic_stable, 50.0)
    assert np.abs(sol.states - eq.endemic_stable).max() < 1e-9


def test_start_inside_basin_converges_to_endemic_point(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    zt = eq.endemic_unstable
    z = zt + 0.02 * (dom.z0 - zt) / np.linalg.norm(dom.z0 - zt)
    assert np.linalg.norm(integrate(net, z, 40.0).final - eq.endemic_stable) < 1e-4


def test_start_just_outside_basin_goes_disease_free(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    zt = eq.endemic_unstable
    z = zt - 0.005 * (dom.z0 - zt) / np.linalg.norm(dom.z0 - zt)
    assert not dom.contains(z)
    # the previously-infected class only dies out at rate mu, hence the long horizon
    assert np.linalg.norm(integrate(net, z, 3000.0).final) < 1e-3


def test_states_stay_in_simplex(siv):
    _, net, _ = siv
    sol = integrate(net, [0.9, 0.1], 30.0)
    assert np.all(sol.states >= 0) and np.all(sol.states.sum(axis=1) <= 1 + 1e-12)


def test_backward_integration_reverses_forward(s0is1):
    _, net, _ = s0is1
    z = np.array([0.2, 0.6])
    fwd = integrate(net, z, 1.5).final
    assert np.allclose(integrate_backward(net, fwd, 1.5).final, z, atol=1e-8)


def test_rejects_start_outside_simplex(s0is1):
    with pytest.raises(ValueError):
        integrate(s0is1[1], [0.8, 0.8], 1.0)


def test_rescaled_at_zero_returns_start(s0is1):
    sol = integrate_rescaled(s0is1[1], [0.2, 0.3], 0.0)
    assert np.array_equal(sol.final, [0.2, 0.3])


def test_rescaled_rejects_u_end_one(s0is1):
    with pytest.raises(ValueError):
        integrate_rescaled(s0is1[1], [0.2, 0.3], 1.0)


def test_rescaled_half_equals_plain_time_one(siv):
    _, net, _ = siv
    z = [0.3, 0.4]
    assert np.allclose(integrate_rescaled(net, z, 0.5).final, integrate(net, z, 1.0).final, atol=1e-8)


def test_rescaling_identity_on_random_starts(s0is1, rng):
    _, net, _ = s0is1
    for _ in range(20):
        z = rng.dirichlet(np.ones(3))[:2]
        u = rng.uniform(0.05, 0.9)
        a = integrate_rescaled(net, z, u).final
        b = integrate(net, z, u / (1 - u)).final
        assert np.allclose(a, b, atol=1e-8)


def test_siv_from_curve_start_approaches_saddle(siv, siv_geometry):
    _, net, eq = siv
    curve, _ = siv_geometry
    sol = integrate_rescaled(net, curve.start, 0.999)
    u = np.linspace(0, 0.999, 4000)
    closest = np.linalg.norm(sol(u) - eq.endemic_unstable, axis=1).min()
    assert closest < 1e-3


# ---- equilibria ----------------------------------------------------------

def test_siv_disease_free_point():
    eq = equilibria_siv(SivParams.fitted())
    assert eq.dfe[0] == 0 and eq.dfe[1] == pytest.approx(6 / 7, abs=1e-12)


def test_siv_endemic_coordinates():
    eq = equilibria_siv(SivParams.fitted())
    assert eq.regime == "two"
    assert eq.endemic_unstable[0] == pytest.approx(0.178807, abs=1e-5)
    assert eq.endemic_stable[0] == pytest.approx(0.312860, abs=1e-5)


def test_siv_negative_discriminant_gives_no_endemic_points():
    p = SivParams(beta=0.5, chi=0.1, eta=0.3, mu=0.02, gamma=1.01, theta=0.03)
    D1, D2, D3 = siv_quadratic(p)
    assert D2 * D2 - 4 * D1 * D3 < 0
    eq = equilibria_siv(p)
    assert eq.regime == "none" and eq.endemic_stable is None and eq.endemic_unstable is None


def test_siv_zero_beta_rejected():
    with pytest.raises(ValueError):
        equilibria_siv(SivParams(beta=0.0, chi=0.1, eta=0.3, mu=0.02, gamma=1.01, theta=0.03))


def test_s0is1_endemic_coordinates_and_thresholds():
    eq = equilibria_s0is1(S0is1Params.fitted())
    assert np.allclose(eq.endemic_stable, [0.147806, 0.819473], atol=1e-5)
    assert np.allclose(eq.endemic_unstable, [0.011361, 0.683027], atol=1e-5)
    th = eq.thresholds
    assert th["R0"] == pytest.approx(3 / 5.015, abs=1e-6)
    assert th["R0_star"] == pytest.approx(0.554606, abs=1e-5)
    assert th["R0_star"] < th["R0"] < 1


def test_s0is1_zero_denominator_rejected():
    with pytest.raises(ValueError):
        equilibria_s0is1(S0is1Params(beta=1.0, alpha=0.0, mu=0.0, r=2.0))


siv_two = st.builds(SivParams, beta=st.floats(2.0, 6.0), chi=st.floats(0.02, 0.5),
                    eta=st.floats(0.05, 1.0), gamma=st.floats(0.3, 2.0), mu=st.floats(0.0, 0.05),
                    theta=st.floats(0.0, 0.1))
s0is1_any = st.builds(S0is1Params, beta=st.floats(0.5, 6.0), alpha=st.floats(0.5, 8.0),
                      mu=st.floats(0.001, 0.1), r=st.floats(0.5, 5.0))


@given(siv_two)
@settings(max_examples=80, deadline=None)
def test_siv_equilibria_are_rest_points_and_roots(p):
    eq = equilibria_siv(p)
    net = build_siv(p)
    D1, D2, D3 = siv_quadratic(p)
    for z in eq.all():
        assert np.linalg.norm(drift(net, z)) < 1e-8
    for z in (eq.endemic_stable, eq.endemic_unstable):
        if z is not None:
            assert abs(D1 * z[0] ** 2 + D2 * z[0] + D3) < 1e-10
    if eq.endemic_stable is not None and eq.endemic_unstable is not None:
        assert eq.endemic_unstable[0] <= eq.endemic_stable[0]


@given(s0is1_any)
@settings(max_examples=80, deadline=None,
          suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
def test_s0is1_closed_form_matches_bisection(p):
    eq = equilibria_s0is1(p)
    net = build_s0is1(p)
    for z in eq.all():
        assert np.linalg.norm(drift(net, z)) < 1e-8
    assume(eq.regime == "two")
    roots = sorted(s0is1_equilibria_bisection(p))
    assert len(roots) == 2
    assert roots[0] == pytest.approx(eq.endemic_unstable[0], abs=1e-10)
    assert roots[1] == pytest.approx(eq.endemic_stable[0], abs=1e-10)


def test_dispatch_by_model_name():
    assert equilibria("s0is1", S0is1Params.fitted()).regime == "two"
    with pytest.raises(ValueError):
        equilibria("sir", S0is1Params.fitted())


# ---- linearisation -------------------------------------------------------

def test_jacobian_of_linear_field():
    # b(z) = (2 z1 - 0.5 z2, -3 z1)
    net = ReactionNetwork([[1, 0], [0, -1], [-1, 0]], [2.0, 3.0, 0.5],
                          [[1, 0], [1, 0], [0, 1]], [0, 0, 0])
    M = np.array([[2.0, -0.5], [-3.0, 0.0]])
    assert np.allclose(jacobian(net, [0.3, 0.3]).matrix, M, atol=1e-6)


def test_stability_of_s0is1_equilibria(s0is1):
    _, net, eq = s0is1
    assert jacobian(net, eq.endemic_stable).kind == "stable"
    lin = jacobian(net, eq.endemic_unstable)
    assert lin.kind == "saddle"
    assert np.sum(lin.eigenvalues.real > 0) == 1 and np.sum(lin.eigenvalues.real < 0) == 1


def test_stability_of_siv_equilibria(siv):
    _, net, eq = siv
    assert np.all(jacobian(net, eq.endemic_stable).eigenvalues.real < 0)
    assert jacobian(net, eq.endemic_unstable).kind == "saddle"


def test_jacobian_rejects_points_near_faces(s0is1):
    with pytest.raises(ValueError):
        jacobian(s0is1[1], [0.0, 0.5])


def test_exact_jacobian_matches_stencil_and_works_on_faces(s0is1):
    _, net, _ = s0is1
    z = [0.2, 0.5]
    assert np.allclose(jacobian(net, z, step=None).matrix, jacobian(net, z).matrix, atol=1e-7)
    dfe = jacobian(net, [0.0, 0.0], step=None)
    p = S0is1Params.fitted()
    assert np.allclose(sorted(dfe.eigenvalues.real), sorted([-p.mu, p.beta - p.alpha - p.mu]))
