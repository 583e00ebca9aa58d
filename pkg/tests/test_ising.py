import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ising_rg_spde import ising as isg

couplings = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), couplings, st.floats(-2, 2))
def test_transfer_matrix_matches_enumeration(N, K, gamma):
    ch = isg.IsingChain(N, K, gamma)
    assert isg.partition(ch) == pytest.approx(isg.enumerate_partition(ch), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10), couplings, st.data())
def test_two_point_matches_enumeration(N, K, data):
    r = data.draw(st.integers(1, N - 1))
    ch = isg.IsingChain(N, K)
    assert isg.two_point(ch, r) == pytest.approx(isg.enumerate_two_point(ch, r), abs=1e-12)


def test_log_partition_large_chain():
    ch = isg.IsingChain(5000, 1.2, 0.3)
    assert math.isfinite(isg.log_partition(ch))
    assert isg.partition(ch) == math.inf


def test_two_point_zero_coupling_is_exact_zero():
    ch = isg.IsingChain(9, 0.0)
    assert all(isg.two_point(ch, r) == 0.0 for r in range(1, 9))


@pytest.mark.parametrize("K", [-2.0, -0.3, 0.0, 0.4, 1.5, 8.0])
def test_decimation_recursion(K):
    K1, _ = isg.decimate(K)
    assert math.tanh(K1) == pytest.approx(math.tanh(K) ** 3, rel=4e-16, abs=1e-300)


@pytest.mark.parametrize("N", [6, 9, 12])
@pytest.mark.parametrize("K,gamma", [(0.3, 0.0), (1.1, 0.7), (-0.8, 2.0)])
def test_decimation_invariance(N, K, gamma):
    a, b = isg.decimation_log_identity(isg.IsingChain(N, K, gamma))
    assert abs(math.expm1(a - b)) <= 1e-12


def test_decimation_large_coupling_is_finite():
    K1, g = isg.decimate(40.0)
    assert K1 == pytest.approx(40.0 - 0.5 * math.log(3.0), rel=1e-12)
    assert math.isfinite(g)


def test_sign_dynamics_shapes_and_values():
    out = isg.sign_dynamics(5, 0.2, 1.5, 20, seed=3)
    assert out.shape == (21, 5)
    assert set(np.unique(out)) <= {-1, 1}
    many = isg.sign_dynamics(5, 0.2, 1.5, 20, seed=3, chains=4)
    assert many.shape == (21, 4, 5)
    assert np.array_equal(isg.sign_dynamics(5, 0.2, 1.5, 20, seed=3), out)


def test_transition_matrix_is_stochastic():
    P, s = isg.dynamics_transition_matrix(4, 0.5, 1.5)
    assert P.shape == (16, 16)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)


def test_zero_coupling_dynamics_is_uncorrelated():
    assert isg.dynamics_stationary_two_point(6, 0.0, 1.5, 2) == pytest.approx(0.0, abs=1e-14)


def test_dynamics_law_differs_from_ising_for_positive_coupling():
    chain_law = isg.dynamics_stationary_two_point(6, 0.3, 1.5, 1)
    ising = isg.two_point(isg.IsingChain(6, 0.3), 1)
    assert abs(chain_law - ising) > 0.1


def test_empirical_matches_chain_law():
    emp = isg.empirical_two_point(6, 0.3, 1.5, 1, chains=200, sweeps=500, seed=1)
    want = isg.dynamics_stationary_two_point(6, 0.3, 1.5, 1)
    assert abs(emp.value - want) <= 4 * emp.stderr
