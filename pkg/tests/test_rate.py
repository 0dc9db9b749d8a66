import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_slice_instance, s0is1_slice_bruteforce
from reflected_ldp.fluid import integrate, integrate_backward
from reflected_ldp.model_core import ReactionNetwork
from reflected_ldp.rate import (ControlTrajectory, PiecewisePath, cramer_rate_poisson,
                                empirical_control, g_eps, h_eps, h_from_g, local_rate, path_rate,
                                path_rate_given_control, polygonal_approx, slice_rate)
from reflected_ldp.simulate import PathRecord, simulate_reflected


def toy_path():
    # N = 10, three events: infection at 0.1, recovery at 0.35, infection at 0.8
    return PathRecord(10, 1.0, np.array([2, 3]), np.array([0.1, 0.35, 0.8]), np.array([0, 1, 0]),
                      np.array([True, True, True]), np.array([[3, 3], [2, 4], [3, 4]]))


# ---- local cost ----------------------------------------------------------

def test_local_rate_conventions():
    assert local_rate(0.0, 2.0) == 2.0
    assert local_rate(1.0, 0.0) == math.inf
    assert local_rate(0.0, 0.0) == 0.0
    assert local_rate(1.0, 2.0) == pytest.approx(1 - math.log(2), abs=1e-15)
    for w in (0.0, 1e-8, 0.3, 7.0):
        assert local_rate(w, w) == 0.0
    with pytest.raises(ValueError):
        local_rate(-1.0, 1.0)


@given(st.floats(1e-3, 50), st.floats(0, 50), st.floats(0, 50), st.floats(0, 1))
@settings(max_examples=300)
def test_local_rate_convex_nonnegative(w, x, y, lam):
    fx, fy = local_rate(x, w), local_rate(y, w)
    assert fx >= 0 and fy >= 0
    mid = local_rate(lam * x + (1 - lam) * y, w)
    assert mid <= lam * fx + (1 - lam) * fy + 1e-9 * (1 + fx + fy)
    if x != w:
        assert fx > 0


def test_scale_functions():
    assert g_eps(math.exp(-1)) == pytest.approx(1.0)
    assert g_eps(math.exp(-4)) == pytest.approx(0.5)
    assert g_eps(1e-3, K=2) == pytest.approx(2 / math.sqrt(math.log(1000)))
    assert h_from_g(0.25, 0.5) == pytest.approx(math.log(2) ** -2)
    assert h_from_g(0.25, 0.5) == pytest.approx(2.0814, abs=1e-4)
    assert h_from_g(math.exp(-2), 0.25) == pytest.approx(1.0)
    hs = [h_eps(e, 0.25, 1.0) for e in (1e-2, 1e-4, 1e-8, 1e-16, 1e-64)]
    assert all(b < a for a, b in zip(hs, hs[1:]))
    with pytest.raises(ValueError):
        g_eps(1.0)
    with pytest.raises(ValueError):
        h_eps(0.5)  # g > 1


def test_cramer_rate():
    assert cramer_rate_poisson(3.0, 3.0) == 0.0
    assert cramer_rate_poisson(0.0, 2.5) == 2.5
    assert cramer_rate_poisson(4.0, 2.0) == pytest.approx(2.0 * (2 * math.log(2) - 1))
    with pytest.raises(ValueError):
        cramer_rate_poisson(1.0, 0.0)


# ---- slice problem -------------------------------------------------------

def test_slice_at_drift_is_free(s0is1):
    _, net, _ = s0is1
    z = np.array([0.1, 0.5])
    val, mu = slice_rate(net, z, net.drift_field(z))
    assert val < 1e-12
    assert np.allclose(mu, net.rates(z), atol=1e-10)


def test_slice_example_matches_bruteforce(s0is1):
    _, net, _ = s0is1
    val, mu = slice_rate(net, [0.1, 0.5], [0.05, -0.02])
    assert val == pytest.approx(s0is1_slice_bruteforce(net, [0.1, 0.5], [0.05, -0.02]), abs=1e-4)
    assert np.allclose(mu @ net.jumps, [0.05, -0.02], atol=1e-9)


def test_slice_infeasible_is_infinite():
    # only upward jumps: no downward velocity can be produced
    net = ReactionNetwork([[1, 0], [0, 1]], [1.0, 1.0], [[0, 0], [0, 0]], [1, 1])
    val, mu = slice_rate(net, [0.2, 0.2], [-0.1, 0.0])
    assert val == math.inf and mu is None


def test_slice_forced_zero_rate(s0is1):
    # at z1 = 0 every I-dependent rate vanishes; a positive I velocity needs reinfection, also zero
    _, net, _ = s0is1
    assert slice_rate(net, [0.0, 0.5], [0.05, -0.02])[0] == math.inf
    val, mu = slice_rate(net, [0.0, 0.5], [0.0, -0.02])
    assert math.isfinite(val) and mu[:4].tolist() == [0, 0, 0, 0]
    assert val == pytest.approx(local_rate(0.02, net.rates([0.0, 0.5])[4]))


def test_slice_dimension_mismatch(s0is1):
    with pytest.raises(ValueError):
        slice_rate(s0is1[1], [0.1, 0.2, 0.3], [0.0, 0.0])


def test_slice_oracle_on_fifty_instances(s0is1):
    _, net, _ = s0is1
    rng = np.random.default_rng(2)
    for _ in range(50):
        z, v, _mu = random_slice_instance(net, rng)
        val, _ = slice_rate(net, z, v)
        assert abs(val - s0is1_slice_bruteforce(net, z, v)) <= 1e-4


def test_slice_dominance(s0is1):
    _, net, _ = s0is1
    rng = np.random.default_rng(3)
    for _ in range(1000):
        z, v, mu = random_slice_instance(net, rng)
        val, _ = slice_rate(net, z, v)
        assert val <= local_rate(mu, net.rates(z)).sum() + 1e-9


# ---- path functional -----------------------------------------------------

def fluid_piecewise(net, z0, T, n=200):
    return PiecewisePath.from_function(integrate(net, z0, T), T, n)


def test_fluid_paths_cost_nothing(s0is1, siv):
    for _, net, eq in (s0is1, siv):
        for z0 in (eq.endemic_stable + np.array([0.02, -0.02]), np.array([0.3, 0.3])):
            assert path_rate(net, fluid_piecewise(net, z0, 2.0)).value < 1e-6


def test_constant_path_equals_single_slice(s0is1):
    _, net, _ = s0is1
    z = np.array([0.3, 0.3])
    phi = PiecewisePath(np.array([0.0, 0.7, 2.0]), np.array([z, z, z]))
    expected = 2.0 * slice_rate(net, z, np.zeros(2))[0]
    assert expected > 0
    assert path_rate(net, phi).value == pytest.approx(expected, rel=1e-12)


def test_reversed_flow_costs_and_relaxes_toward_forward_flow(s0is1):
    _, net, eq = s0is1
    start = eq.endemic_stable + np.array([-0.005, -0.02])
    T = 0.5
    values = []
    for c in (-1.0, -0.5, 0.0, 0.5, 1.0):
        scaled = ReactionNetwork(net.jumps, abs(c) * net.coef + (c == 0) * 0.0, net.zexp, net.sexp)
        if c == 0:
            phi = PiecewisePath(np.array([0.0, T]), np.array([start, start]))
        elif c > 0:
            phi = PiecewisePath.from_function(integrate(scaled, start, T), T, 100)
        else:
            phi = PiecewisePath.from_function(integrate_backward(scaled, start, T), T, 100)
        values.append(path_rate(net, phi).value)
    assert values[0] > 0
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-6


def test_path_rate_continuity_smoke(s0is1):
    _, net, _ = s0is1
    rng = np.random.default_rng(5)
    for _ in range(10):
        start = np.array([0.15, 0.55]) + rng.uniform(-0.05, 0.05, 2)
        phi = PiecewisePath.from_function(integrate_backward(net, start, 0.3), 0.3, 20)
        base = path_rate(net, phi, max_refinements=2).value
        noise = rng.normal(size=phi.values.shape)
        gaps = []
        for delta in (1e-2, 1e-3, 1e-4):
            pert = PiecewisePath(phi.breakpoints, phi.values + delta * noise)
            gaps.append(abs(path_rate(net, pert, max_refinements=2).value - base))
        assert gaps[2] < gaps[0] and gaps[2] < 1e-2


def test_bisection_resamples_source_or_interpolates():
    f = lambda t: np.column_stack([t ** 2, 0.1 + 0 * t])
    phi = PiecewisePath.from_function(f, 1.0, 3)
    assert np.allclose(phi.bisect().values[1], [1 / 16, 0.1])
    plain = PiecewisePath(phi.breakpoints, phi.values)
    assert np.allclose(plain.bisect().values[1], [1 / 8, 0.1])


def test_path_rate_infinite_propagates():
    net = ReactionNetwork([[1, 0], [0, 1]], [1.0, 1.0], [[0, 0], [0, 0]], [1, 1])
    phi = PiecewisePath(np.array([0.0, 1.0]), np.array([[0.3, 0.2], [0.2, 0.2]]))
    rep = path_rate(net, phi)
    assert rep.value == math.inf and rep.minimizer is None
    assert rep.to_dict()["value"] == "inf"


def test_given_control_at_minimiser_matches(s0is1):
    _, net, eq = s0is1
    sol = integrate_backward(net, eq.endemic_stable + [0.0, -0.02], 0.5)
    rep = path_rate(net, PiecewisePath.from_function(sol, 0.5, 40))
    fine = PiecewisePath(rep.breakpoints, sol(rep.breakpoints))
    assert path_rate_given_control(net, fine, rep.minimizer) == pytest.approx(rep.value, abs=1e-8)


def test_given_control_rates_on_fluid_path_cost_zero(s0is1):
    _, net, eq = s0is1
    phi = fluid_piecewise(net, eq.endemic_stable + [0.02, -0.02], 1.0)
    mu = ControlTrajectory(phi.breakpoints, net.rates(phi.midpoints))
    assert path_rate_given_control(net, phi, mu, check=False) == 0.0


def test_given_control_dominance(s0is1):
    _, net, eq = s0is1
    rng = np.random.default_rng(8)
    phi = PiecewisePath.from_function(integrate_backward(net, eq.endemic_stable + [0.0, -0.02], 0.5), 0.5, 30)
    rep = path_rate(net, phi, max_refinements=0)
    H = net.jumps.T.astype(float)
    null = np.linalg.svd(H)[2][net.d:]  # basis of ker H
    for _ in range(100):
        mu = rep.minimizer.mu.copy()
        for i in range(mu.shape[0]):
            w = rng.normal(size=null.shape[0]) @ null
            neg = w < 0
            tmax = np.min(mu[i][neg] / -w[neg]) if neg.any() else 1.0
            mu[i] = np.maximum(mu[i] + rng.uniform(0, 1) * min(tmax, 1.0) * w, 0.0)
        ctrl = ControlTrajectory(rep.breakpoints, mu)
        assert path_rate_given_control(net, phi, ctrl, tol=1e-8) - rep.value >= -1e-9


def test_given_control_rejects_infeasible(s0is1):
    _, net, eq = s0is1
    phi = fluid_piecewise(net, eq.endemic_stable, 1.0, n=5)
    with pytest.raises(ValueError):
        path_rate_given_control(net, phi, ControlTrajectory(phi.breakpoints, np.zeros((4, net.k)) + 1.0))


# ---- polygonal approximation and empirical controls ----------------------

def test_polygon_of_eventless_path_is_constant():
    p = PathRecord(20, 1.0, np.array([4, 6]), np.zeros(0), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=bool), np.zeros((0, 2), dtype=np.int64))
    ups = polygonal_approx(p, None, 0.25, 0.0)
    assert np.array_equal(ups.values, np.tile([0.2, 0.3], (5, 1)))
    ctrl = empirical_control(p, 0.25, 0.0, k=5)
    assert not ctrl.mu.any()


def test_polygon_grid_values_and_midpoints():
    p = toy_path()
    z0 = np.array([0.4, 0.2])
    ups = polygonal_approx(p, None, 0.25, 0.5, z0=z0)
    grid = np.array([[2, 3], [3, 3], [2, 4], [2, 4], [3, 4]]) / 10
    assert np.allclose(ups.values, 0.5 * grid + 0.5 * z0, rtol=0, atol=1e-15)
    assert np.allclose(ups(0.125), [0.325, 0.25], atol=1e-15)
    assert np.allclose(ups(0.625), [0.3, 0.3], atol=1e-15)


def test_polygon_rejects_non_integer_grid():
    with pytest.raises(ValueError):
        polygonal_approx(toy_path(), None, 0.3, 0.0)
    with pytest.raises(ValueError):
        empirical_control(toy_path(), 0.3, 0.0)


def test_empirical_control_formula():
    p = PathRecord(100, 0.2, np.array([10, 50]), np.array([0.05]), np.array([0]),
                   np.array([True]), np.array([[11, 50]]))
    ctrl = empirical_control(p, 0.1, 0.2, k=5)
    assert ctrl.mu[0, 0] == pytest.approx(0.08)
    assert not ctrl.mu[1].any()


def test_empirical_control_counts_toy_path():
    ctrl = empirical_control(toy_path(), 0.25, 0.0, k=5)
    assert np.allclose(ctrl.mu[:, :2], [[0.4, 0], [0, 0.4], [0, 0], [0.4, 0]])


def test_empirical_control_feasible_on_clean_slices(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    zt = eq.endemic_unstable
    z = zt + 0.02 * (dom.z0 - zt) / np.linalg.norm(dom.z0 - zt)
    a = 0.1
    for r in range(5):
        p = simulate_reflected(net, dom, 200, z, 2.0, seed=4, replicate=r)
        ups = polygonal_approx(p, dom, 0.1, a)
        ctrl = empirical_control(p, 0.1, a, k=net.k)
        clean = ~ctrl.flagged
        diff = np.abs(ctrl.velocities(net) - ups.velocities)[clean]
        assert diff.max(initial=0.0) <= 1e-12
        assert ctrl.flagged.sum() == len(np.unique((p.times[~p.applied] / 0.1).astype(int)))
