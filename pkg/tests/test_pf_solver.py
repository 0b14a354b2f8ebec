import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hlwnet.assoc import mptcp_association
from hlwnet.channel import channel_state
from hlwnet.evalx import random_drop
from hlwnet.pf_solver import (barrier_refine, brute_force_pf, equal_split, kkt_residual,
                              solve_pf, utility)


def full(n_a, n_u):
    return np.ones((n_a, n_u), dtype=bool)


def random_instance(rng, n_a=None, n_u=None):
    n_a = n_a or int(rng.integers(1, 4))
    n_u = n_u or int(rng.integers(1, 4))
    cap = np.exp(rng.uniform(np.log(10), np.log(500), (n_a, n_u)))
    chi = rng.random((n_a, n_u)) < 0.7
    chi[rng.integers(0, n_a, n_u), np.arange(n_u)] = True
    return cap, chi


def test_single_ap_equal_split():
    r = solve_pf(np.array([[100.0, 50.0]]), full(1, 2))
    np.testing.assert_allclose(r.allocation, [[0.5, 0.5]], atol=1e-9)
    r = solve_pf(np.array([[3.0, 7.0, 11.0, 400.0, 1.0]]), full(1, 5))
    np.testing.assert_allclose(r.allocation, np.full((1, 5), 0.2), atol=1e-9)


def test_single_ue_gets_everything():
    r = solve_pf(np.array([[100.0], [3.0]]), full(2, 1))
    np.testing.assert_array_equal(r.allocation, [[1.0], [1.0]])
    assert r.converged


def test_symmetric_two_by_two():
    r = solve_pf(np.full((2, 2), 80.0), full(2, 2))
    np.testing.assert_allclose(r.allocation, 0.5, atol=1e-9)
    assert r.kkt_residual <= 1e-9


def test_brute_force_enumerable():
    r = brute_force_pf(np.array([[100.0, 50.0]]), full(1, 2), grid_step=0.5)
    np.testing.assert_array_equal(r.allocation, [[0.5, 0.5]])
    r = brute_force_pf(np.array([[100.0, 50.0]]), full(1, 2), grid_step=0.01)
    np.testing.assert_allclose(r.allocation, [[0.5, 0.5]])


def test_brute_force_guard():
    with pytest.raises(ValueError):
        brute_force_pf(np.ones((4, 2)), full(4, 2))
    with pytest.raises(ValueError):
        brute_force_pf(np.ones((2, 2)), full(2, 2), grid_step=0.3)


def test_random_three_by_three_matches_oracle(rng):
    for _ in range(5):
        cap, chi = random_instance(rng, 3, 3)
        r = solve_pf(cap, chi)
        b = brute_force_pf(cap, chi, grid_step=0.001)
        assert r.converged and r.utility >= b.utility - 1e-3
        assert b.utility <= r.utility + 1e-3


def test_feasibility_on_network_drop(topo, rng):
    ch = channel_state(topo, random_drop(topo, 40, rng))
    chi = mptcp_association(ch, topo, 3).chi
    r = solve_pf(ch.capacity, chi)
    rho = r.allocation
    assert r.converged and r.kkt_residual <= 1e-6
    assert np.all((rho >= 0) & (rho <= 1))
    assert np.all(rho.sum(1) <= 1 + 1e-9)
    assert np.all(rho[~chi] == 0)


def test_history_monotone(topo, rng):
    ch = channel_state(topo, random_drop(topo, 30, rng))
    r = solve_pf(ch.capacity, mptcp_association(ch, topo, 4))
    assert r.history.size == r.iterations
    assert np.all(np.diff(r.history) >= -1e-12)


def test_kkt_residual_examples():
    cap = np.full((2, 2), 80.0)
    opt = solve_pf(cap, full(2, 2)).allocation
    assert kkt_residual(cap, full(2, 2), opt) <= 1e-9
    bad = np.full((2, 2), 0.75)
    assert kkt_residual(cap, full(2, 2), bad) >= 0.5


def test_kkt_detects_perturbation(rng):
    for _ in range(10):
        cap, chi = random_instance(rng, 3, 3)
        r = solve_pf(cap, chi)
        i, j = np.argwhere(chi & (r.allocation > 0.2))[0]
        rho = r.allocation.copy()
        rho[i, j] -= 0.1
        assert kkt_residual(cap, chi, rho) > 1e-3


def test_zero_capacity_ue_excluded():
    cap = np.array([[10.0, 0.0, 20.0], [5.0, 0.0, 0.0]])
    r = solve_pf(cap, full(2, 3))
    assert r.excluded_ues.tolist() == [1]
    assert np.all(r.allocation[:, 1] == 0)
    assert np.isfinite(r.utility) and r.converged


def test_shape_and_value_errors():
    with pytest.raises(ValueError):
        solve_pf(np.ones((2, 2)), full(2, 3))
    with pytest.raises(ValueError):
        solve_pf(-np.ones((2, 2)), full(2, 2))


def test_iteration_cap_reports_not_converged(topo, rng):
    ch = channel_state(topo, random_drop(topo, 30, rng))
    r = solve_pf(ch.capacity, mptcp_association(ch, topo, 3), max_iters=1, switch_after=None)
    assert r.iterations == 1 and not r.converged


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
def test_ue_scale_leaves_allocation(seed, factor):
    rng = np.random.default_rng(seed)
    cap, chi = random_instance(rng, 3, 3)
    base = solve_pf(cap, chi)
    j = int(rng.integers(0, 3))
    scaled = cap.copy()
    scaled[:, j] *= factor
    np.testing.assert_allclose(solve_pf(scaled, chi).allocation, base.allocation, atol=1e-6)


def test_mptcp_dominates_sss(topo, rng):
    from hlwnet.assoc import sss_association
    for _ in range(5):
        ch = channel_state(topo, random_drop(topo, 20, rng))
        u_mp = solve_pf(ch.capacity, mptcp_association(ch, topo, 3)).utility
        u_tcp = solve_pf(ch.capacity, sss_association(ch)).utility
        assert u_mp >= u_tcp - 1e-6


def test_barrier_fallback_reaches_same_optimum(topo):
    ch = channel_state(topo, random_drop(topo, 30, np.random.default_rng(77)))
    chi = mptcp_association(ch, topo, 3).chi
    pure = solve_pf(ch.capacity, chi, switch_after=None)
    early = solve_pf(ch.capacity, chi, switch_after=3)
    assert pure.converged and early.converged
    assert early.utility == pytest.approx(pure.utility, abs=1e-7)
    np.testing.assert_allclose(early.allocation, pure.allocation, atol=1e-4)


def test_barrier_refine_interior_and_better(topo):
    ch = channel_state(topo, random_drop(topo, 20, np.random.default_rng(5)))
    chi = mptcp_association(ch, topo, 3).chi
    link = chi & (ch.capacity > 0)
    start = equal_split(link)
    rho = barrier_refine(ch.capacity, link, start)
    assert np.all(rho[link] > 0) and np.all(rho[~link] == 0)
    assert np.all(rho.sum(1) <= 1 + 1e-9)
    assert utility(ch.capacity, rho) > utility(ch.capacity, start)
