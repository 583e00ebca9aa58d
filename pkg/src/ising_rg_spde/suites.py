"""Deterministic invariant suites for the kernel and the drift."""

from __future__ import annotations

import math

import numpy as np

from . import kernel as _k
from .drift import DriftParams, U, U_and_prime, b_prime, b_prime_range, g_eps, g_eps_inv, mollifier
from .functional import Verdict, judge

SUITE_RHOS = (0.01, 0.05, 0.1, 0.5)


def _tol(check: str, err: float, tol: float, info=None) -> Verdict:
    return judge(check, math.nan, float(err), float(tol), 0.0, 0.0, info)


def semigroup_quadrature(x, y, kp: _k.KernelParams, panels: int = 64, order: int = 16):
    """``int_0^1 rho~(x, z) rho~(z, y) dz`` by composite Gauss-Legendre."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)[:, None]
    z = (edges[:-1, None] + 0.5 * h * (t + 1)).ravel()
    wz = (0.5 * h * w).ravel()
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    return np.sum(_k.rho_tilde(x, z, kp) * _k.rho_tilde(z, y, kp) * wz, axis=-1)


def kernel_suite(rhos=SUITE_RHOS, n_points: int = 100, n_pairs: int = 1000, seed: int = 0, trace_rhos=(0.01, 0.05, 0.1, 0.3, 0.9)) -> list[Verdict]:
    """Dual representation, semigroup identity, pointwise envelopes, trace and HS bounds."""
    g = np.random.default_rng(seed)
    out = []
    x = g.uniform(0, 1, n_points)
    y = g.uniform(0, 1, n_points)
    for rho in rhos:
        kp = _k.KernelParams(rho)
        err = np.max(np.abs(_k.rho_tilde(x, y, kp, "sine") - _k.rho_tilde(x, y, kp, "image")))
        out.append(_tol(f"dual_representation[rho={rho:g}]", err, 1e-10))
        err = np.max(np.abs(semigroup_quadrature(x[:20], y[:20], kp) - _k.covariance_K(x[:20], y[:20], kp)))
        out.append(_tol(f"semigroup[rho={rho:g}]", err, 1e-10))
        x1 = g.uniform(0, 1, n_pairs)
        x2 = g.uniform(0, 1, n_pairs)
        rb, kb = _k.pointwise_bounds(x1, x2, rho)
        excess = max(
            float(np.max(np.abs(_k.rho_tilde(x1, x2, kp)) - rb)),
            float(np.max(np.abs(_k.covariance_K(x1, x2, kp)) - kb)),
        )
        out.append(_tol(f"pointwise_envelope[rho={rho:g}]", excess, 0.0))
    for rho in trace_rhos:
        kp = _k.KernelParams(rho)
        lo, hi = _k.trace_bounds(rho)
        tr = _k.trace_Q(kp)
        out.append(_tol(f"trace_lower[rho={rho:g}]", lo, tr))
        out.append(_tol(f"trace_upper[rho={rho:g}]", tr, hi))
        out.append(_tol(f"hs_upper[rho={rho:g}]", _k.hs_norm_sq_Qpartial(kp), _k.hs_upper_bound(rho)))
    return out


def drift_suite(dp: DriftParams, n_points: int = 10_000, seed: int = 0) -> list[Verdict]:
    """Inverse roundtrip, linear zone, derivative range, mollifier mass, table accuracy."""
    g = np.random.default_rng(seed)
    out = []
    x = g.uniform(-5, 5, n_points)
    err = np.max(np.abs(g_eps(g_eps_inv(x, dp), dp) - x) / np.maximum(1, np.abs(x)))
    out.append(_tol("g_roundtrip", err, 1e-12))
    xl = g.uniform(-(1 - dp.delta), 1 - dp.delta, 1000)
    out.append(_tol("linear_zone", np.max(np.abs(U(xl, dp) + dp.epsilon * xl)), 0.0))
    xs = np.linspace(-3, 3, 4001)
    bp = b_prime(xs, dp)
    lo, hi = b_prime_range(dp)
    slack = 1e-9 * max(1.0, abs(lo))
    out.append(_tol("b_prime_lower", lo - slack, float(bp.min())))
    out.append(_tol("b_prime_upper", float(bp.max()), hi + slack))
    t, w = np.polynomial.legendre.leggauss(200)
    mass = float(np.sum(w * mollifier(t * dp.delta, dp.delta, dp.J_hat)) * dp.delta)
    out.append(_tol("mollifier_mass", abs(mass - 1), 1e-10))
    ut, upt = U_and_prime(xs, dp, "table")
    err = max(float(np.max(np.abs(ut - U(xs, dp)))), float(np.max(np.abs(upt - (bp - (1 - dp.gamma))))) * dp.epsilon)
    out.append(_tol("table_vs_quadrature", err, 1e-8))
    return out
