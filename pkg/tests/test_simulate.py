import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from reflected_ldp.fluid import integrate
from reflected_ldp.model_core import DomainError, ReactionNetwork
from reflected_ldp.simulate import (PathRecord, blocked_indicators, diagnostics, simulate_batch,
                                    simulate_free, simulate_reflected)


def birth_only(c=1.0):
    return ReactionNetwork([[1]], [c], [[0]], [0])


def zero_net():
    return ReactionNetwork([[1, 0], [-1, 1]], [0.0, 0.0], [[0, 0], [1, 0]], [1, 0])


def near_boundary_start(eq, dom, shift=0.02):
    zt = eq.endemic_unstable
    return zt + shift * (dom.z0 - zt) / np.linalg.norm(dom.z0 - zt)


def test_zero_rates_give_constant_path():
    p = simulate_free(zero_net(), 50, [0.2, 0.3], 3.0, seed=1)
    assert p.n_events == 0
    assert np.array_equal(p.state_at([0.0, 1.5, 3.0]), np.tile([0.2, 0.3], (3, 1)))
    rep = diagnostics(simulate_reflected(zero_net(), None, 50, [0.2, 0.3], 3.0, seed=1), zero_net())
    assert rep.sup_martingale == 0 and rep.sup_phi == 0 and rep.occupation == 0
    assert not rep.suppressed_count.any()


def test_initial_state_is_floor():
    p = simulate_free(zero_net(), 7, [0.5, 0.25], 1.0, seed=0)
    assert np.array_equal(p.initial_counts, [3, 1])


def test_event_count_is_poisson():
    N, c, T, R = 100, 1.0, 1.0, 10_000
    net = birth_only(c)
    counts = np.array([simulate_free(net, N, [0.0], T, seed=7, replicate=r, unbounded=True).n_events
                       for r in range(R)])
    lam = N * c * T
    # bins with expected count >= 5 at both tails
    edges = np.arange(int(lam - 30), int(lam + 31), 3)
    obs = np.histogram(counts, bins=np.concatenate([[-np.inf], edges, [np.inf]]))[0]
    cdf = stats.poisson.cdf(np.concatenate([edges - 1, [np.inf]]), lam)
    exp = R * np.diff(np.concatenate([[0.0], cdf]))
    assert exp.min() >= 5
    assert stats.chisquare(obs, exp).pvalue > 0.01
    se_mean = np.sqrt(lam / R)
    assert abs(counts.mean() - lam) < 3 * se_mean
    se_var = lam * np.sqrt(2.0 / (R - 1))
    assert abs(counts.var(ddof=1) - lam) < 3 * se_var


def test_leaving_a_is_reported():
    with pytest.raises(DomainError, match="T1"):
        simulate_free(birth_only(), 10, [1.0], 5.0, seed=0)


def test_start_outside_rejected(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    with pytest.raises(DomainError):
        simulate_free(net, 10, [0.8, 0.8], 1.0, seed=0)
    with pytest.raises(DomainError):
        simulate_reflected(net, s0is1_geometry[1], 100, eq.dfe, 1.0, seed=0)


def test_siv_lln_sanity(siv):
    _, net, eq = siv
    z = eq.endemic_stable
    sol = integrate(net, z, 5.0, n_out=2001)
    B = simulate_batch(net, 10_000, z, 5.0, 99, range(200), reflected=False,
                       reference=(sol.times, sol.states))
    assert np.mean(B.sup_dist < 0.05) >= 0.95


def test_reflected_on_a_equals_free_away_from_faces(s0is1):
    _, net, eq = s0is1
    for r in range(5):
        free = simulate_free(net, 1000, eq.endemic_stable, 1.0, seed=3, replicate=r)
        refl = simulate_reflected(net, None, 1000, eq.endemic_stable, 1.0, seed=3, replicate=r)
        assert refl.applied.all()
        assert np.array_equal(free.times, refl.times)
        assert np.array_equal(free.counts, refl.counts)


def check_bookkeeping(path, net, dom):
    mask = dom.lattice_mask(path.N)
    states = path.all_counts()
    assert mask[states[:, 0], states[:, 1]].all()
    assert np.all(np.diff(path.times) > 0)
    assert path.times[0] >= 0 and path.times[-1] <= path.T
    prev = states[:-1]
    cand = prev + net.jumps[path.transitions]
    blocked = blocked_indicators(net, dom, path.N, prev)[np.arange(path.n_events), path.transitions]
    assert np.array_equal(~blocked, path.applied)
    expected = np.where(path.applied[:, None], cand, prev)
    assert np.array_equal(expected, states[1:])
    step = np.where(path.applied, net.jumps[path.transitions].sum(axis=1), 0)
    assert np.array_equal(np.diff(states.sum(axis=1)), step)
    assert np.array_equal(path.suppressed_count(net.k), np.bincount(path.transitions[blocked], minlength=net.k))


def test_reflected_bookkeeping_near_boundary(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    total = 0
    for r in range(20):
        p = simulate_reflected(net, dom, 500, z, 5.0, seed=11, replicate=r)
        check_bookkeeping(p, net, dom)
        total += (~p.applied).sum()
    assert total > 0


@given(seed=st.integers(0, 2**32 - 1), N=st.sampled_from([50, 200]))
@settings(max_examples=15, deadline=None)
def test_bookkeeping_any_seed(seed, N, s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    check_bookkeeping(simulate_reflected(net, dom, N, near_boundary_start(eq, dom), 2.0, seed), net, dom)


def test_no_recorded_state_outside_domain_in_batch(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    B = simulate_batch(net, 500, near_boundary_start(eq, dom), 5.0, 5, range(500), domain=dom)
    assert dom.contains_many(B.final).all()
    assert (B.n_suppressed > 0).any()


def test_occupation_small_near_boundary_at_n500(s0is1, s0is1_geometry):
    # example setting: shift 0.02 toward the star centre, T = 5, 100 replicates
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    B = simulate_batch(net, 500, z, 5.0, 21, range(100), domain=dom)
    assert np.median(B.occupation) < 0.05


def test_occupation_decreases_with_n(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    med = [np.median(simulate_batch(net, N, z, 5.0, 21, range(300), domain=dom).occupation)
           for N in (500, 2000)]
    assert med[1] < med[0]


def test_batch_matches_single_paths(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    B = simulate_batch(net, 300, z, 2.0, 8, range(4), domain=dom)
    for i in range(4):
        p = simulate_reflected(net, dom, 300, z, 2.0, seed=8, replicate=i)
        assert B.n_events[i] == p.n_events
        assert B.n_suppressed[i] == (~p.applied).sum()
        assert np.array_equal(B.final[i], p.states[-1])
        assert B.occupation[i] == pytest.approx(diagnostics(p, net, dom).occupation, rel=1e-9, abs=1e-12)


def test_batch_order_independent(s0is1):
    _, net, eq = s0is1
    a = simulate_batch(net, 200, eq.endemic_stable, 1.0, 4, [0, 1, 2, 3], reflected=False)
    b = simulate_batch(net, 200, eq.endemic_stable, 1.0, 4, [3, 2, 1, 0], reflected=False, threads=2)
    assert np.array_equal(a.final, b.final[::-1])


def test_determinism(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    assert simulate_reflected(net, dom, 400, z, 3.0, 42).equals(simulate_reflected(net, dom, 400, z, 3.0, 42))
    assert not simulate_reflected(net, dom, 400, z, 3.0, 42).equals(simulate_reflected(net, dom, 400, z, 3.0, 43))


def test_martingale_identity(s0is1, s0is1_geometry):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    z = near_boundary_start(eq, dom)
    for r in range(10):
        rep = diagnostics(simulate_reflected(net, dom, 300, z, 5.0, seed=2, replicate=r), net, dom)
        assert rep.identity_residual <= 1e-12
        assert rep.sup_martingale >= 0 and rep.sup_phi >= 0
        assert 0 <= rep.occupation <= net.k * 5.0


def test_diagnostics_rejects_other_network(s0is1, siv):
    _, net, eq = s0is1
    p = simulate_free(net, 100, eq.endemic_stable, 1.0, seed=0)
    with pytest.raises(ValueError):
        diagnostics(p, siv[1])


@pytest.mark.parametrize("N", [100, 1000])
def test_doob_bound(N, siv):
    _, net, eq = siv
    T = 5.0
    sq = [diagnostics(simulate_reflected(net, None, N, eq.endemic_stable, T, seed=13, replicate=r),
                      net).sup_martingale ** 2 for r in range(100)]
    assert np.mean(sq) <= 4 * net.k * net.d * net.sigma * T / N


def test_csv_round_trip(s0is1, s0is1_geometry, tmp_path):
    _, net, eq = s0is1
    _, dom = s0is1_geometry
    p = simulate_reflected(net, dom, 250, near_boundary_start(eq, dom), 2.0, seed=9)
    text = p.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,j,applied,z1,z2"
    assert len(lines) == p.n_events + 3
    assert lines[1].startswith("0.0,-1,") and lines[-1].startswith("2.0,-1,")
    path = tmp_path / "p.csv"
    p.to_csv(path)
    assert path.read_text() == text
    back = PathRecord.from_csv(path, N=250, reflected=True)
    assert back.equals(p)
