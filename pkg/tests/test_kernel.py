import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ising_rg_spde import kernel as kn
from ising_rg_spde.suites import semigroup_quadrature

unit = st.floats(0.0, 1.0, allow_nan=False)
rhos = st.sampled_from([0.003, 0.01, 0.04, 0.1, 0.3, 1.0, 3.0])


def image_oracle(x, y, rho, L=12):
    """Plain-loop method of images on the whole line."""
    s = 0.0
    for n in range(-L, L + 1):
        s += math.exp(-((x - y + 2 * n) ** 2) / (4 * rho)) - math.exp(-((x + y + 2 * n) ** 2) / (4 * rho))
    return s / math.sqrt(4 * math.pi * rho)


@settings(max_examples=60, deadline=None)
@given(unit, unit, rhos)
def test_sine_and_image_series_agree(x, y, rho):
    kp = kn.KernelParams(rho)
    a = kn.rho_tilde(x, y, kp, "sine")
    b = kn.rho_tilde(x, y, kp, "image")
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@pytest.mark.parametrize("rho", [0.01, 0.1, 0.5])
def test_matches_loop_oracle(rho, rng):
    x, y = rng.uniform(0, 1, (2, 25))
    got = kn.rho_tilde(x, y, kn.KernelParams(rho))
    want = [image_oracle(a, b, rho) for a, b in zip(x, y)]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)


def test_reference_values():
    kp = kn.KernelParams(0.1)
    assert kn.rho_tilde(0.5, 0.5, kp) == pytest.approx(0.745693, abs=5e-7)
    assert kn.trace_Q(kp) == pytest.approx(0.1392835, abs=5e-8)
    # half-sum convention: (1/2) sum k^2 pi^2 exp(-2 k^2 pi^2 rho)
    k = np.arange(1, 200)
    hs = 0.5 * np.sum(k**2 * np.pi**2 * np.exp(-2 * k**2 * np.pi**2 * 0.1))
    assert kn.hs_norm_sq_Qpartial(kp) == pytest.approx(hs, rel=1e-13)
    assert kn.hs_norm_sq_Qpartial(kp) == pytest.approx(0.6928497, abs=5e-8)


def test_dirichlet_boundary_is_exact_zero():
    kp = kn.KernelParams(0.02)
    y = np.linspace(0, 1, 11)
    assert np.all(kn.rho_tilde(0.0, y, kp) == 0.0)
    assert np.all(kn.rho_tilde(y, 1.0, kp) == 0.0)


@settings(max_examples=40, deadline=None)
@given(unit, unit, rhos)
def test_symmetry(x, y, rho):
    kp = kn.KernelParams(rho)
    assert kn.rho_tilde(x, y, kp) == pytest.approx(kn.rho_tilde(y, x, kp), abs=1e-14)


@pytest.mark.parametrize("rho", [0.01, 0.05, 0.2])
def test_semigroup_identity(rho, rng):
    kp = kn.KernelParams(rho)
    x, y = rng.uniform(0, 1, (2, 10))
    np.testing.assert_allclose(semigroup_quadrature(x, y, kp), kn.covariance_K(x, y, kp), atol=1e-10)
    np.testing.assert_allclose(kn.covariance_K(x, y, kp), kn.covariance_K_sine(x, y, kp), atol=1e-12)


@pytest.mark.parametrize("rho", [0.005, 0.05, 0.5])
def test_pointwise_envelopes(rho, rng):
    kp = kn.KernelParams(rho)
    x1, x2 = rng.uniform(0, 1, (2, 500))
    rb, kb = kn.pointwise_bounds(x1, x2, rho)
    assert np.all(np.abs(kn.rho_tilde(x1, x2, kp)) <= rb)
    assert np.all(np.abs(kn.covariance_K(x1, x2, kp)) <= kb)


@pytest.mark.parametrize("rho", [0.01, 0.05, 0.1, 0.3, 0.9])
def test_trace_and_hs_bounds(rho):
    kp = kn.KernelParams(rho)
    lo, hi = kn.trace_bounds(rho)
    assert lo <= kn.trace_Q(kp) <= hi
    assert kn.hs_norm_sq_Qpartial(kp) <= kn.hs_upper_bound(rho)


def test_trace_requires_rho_below_one():
    with pytest.raises(ValueError):
        kn.trace_Q(kn.KernelParams(1.0))
    with pytest.raises(ValueError):
        kn.hs_norm_sq_Qpartial(kn.KernelParams(2.0))


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_invalid_rho(bad):
    with pytest.raises(ValueError):
        kn.KernelParams(bad)


def test_gram_floor_and_bracket():
    kp = kn.KernelParams(0.01)
    pts = [0.25, 0.5, 0.75]
    gm = kn.gram(pts, kp)
    assert gm.gersgorin_floor == pytest.approx(0.1717, abs=1e-4)
    assert gm.lambda_min == pytest.approx(0.7057, abs=1e-4)
    assert gm.gersgorin_floor <= gm.lambda_min
    lo, hi = kn.bracket(pts, kp)
    assert lo == pytest.approx(-3.82, abs=0.01) and hi == pytest.approx(7.81, abs=0.01)
    assert lo <= gm.lambda_min and gm.lambda_max <= hi


def test_gram_rejects_bad_points():
    kp = kn.KernelParams(0.1)
    for pts in ([0.0, 0.5], [0.5, 0.5], [0.6, 0.4], [1.2]):
        with pytest.raises(ValueError):
            kn.gram(pts, kp)


def test_point_constants_midpoint():
    c, chat = kn.point_constants([0.5])
    assert c[0] == pytest.approx(16 + 2 * math.pi**2 / 3, rel=1e-15)
    assert c[0] == pytest.approx(22.5797, abs=1e-4)
    assert chat[0] == pytest.approx(c[0] / math.sqrt(8 * math.pi), rel=1e-15)
    assert chat[0] == pytest.approx(4.50400574, abs=1e-8)


def test_point_constants_pair_terms():
    c, chat = kn.point_constants([0.3, 0.7])
    pair = math.sqrt(8 / math.pi) / 0.4**2 + math.sqrt(2) * math.pi**1.5 / 6
    np.testing.assert_allclose(chat, c / math.sqrt(8 * math.pi) + pair, rtol=1e-14)


def test_kl_noise_variance(rng):
    kp = kn.KernelParams(0.02)
    inc = kn.kl_noise_increment(4, 0.01, kp, rng, size=200_000)
    want = kn.kl_weights(4, 0.02) ** 2 * 0.01
    np.testing.assert_allclose(inc.var(axis=0), want, rtol=0.02)
