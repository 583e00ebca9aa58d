"""Dirichlet heat kernel on the unit interval and the noise covariance it induces.

The smoothing kernel has two equivalent series,

    rho~(x, y; rho) = sum_k 2 sin(k pi x) sin(k pi y) exp(-k^2 pi^2 rho)
                    = (4 pi rho)^(-1/2) sum_n [exp(-(2n+y-x)^2 / 4rho) - exp(-(2n+y+x)^2 / 4rho)],

the sine series converging fast for large ``rho`` and the image (theta) sum for
small ``rho``.  The noise covariance is K(x, y; rho) = rho~(x, y; 2 rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

IMAGE_SWITCH = 0.05


@dataclass(frozen=True)
class KernelParams:
    """Smoothing time ``rho`` with series truncation controls."""

    rho: float
    tol: float = 1e-14
    max_terms: int = 10**6

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be a positive finite number, got {self.rho}")
        if not (0 < self.tol <= 1e-6):
            raise ValueError(f"tol must lie in (0, 1e-6], got {self.tol}")
        if int(self.max_terms) < 1:
            raise ValueError("max_terms must be >= 1")

    def doubled(self) -> "KernelParams":
        return replace(self, rho=2.0 * self.rho)


@dataclass(frozen=True)
class GramMatrix:
    """Covariance matrix of the noise at a set of points with its Gersgorin floor."""

    points: np.ndarray
    entries: np.ndarray
    gersgorin_floor: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def _check_unit(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("kernel arguments must be finite")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("kernel arguments must lie in [0, 1]")


def sine_terms(kp: KernelParams) -> int:
    """Number of sine modes needed so the dropped tail is below ``tol``.

    Term ``k`` is bounded by 2 exp(-k^2 pi^2 rho); we stop once that envelope
    falls below ``tol``.
    """
    k = math.ceil(math.sqrt(math.log(2.0 / kp.tol) / (math.pi**2 * kp.rho)))
    if k > kp.max_terms:
        raise RuntimeError(f"sine series needs {k} terms > max_terms={kp.max_terms} at rho={kp.rho}")
    return max(k, 1)


def image_terms(kp: KernelParams) -> int:
    """Largest image index |n| needed for the theta sum.

    For |n| >= 2 the images sit at distance >= 2|n| - 2 from the interval, so the
    envelope (4 pi rho)^(-1/2) exp(-(2|n|-2)^2 / 4 rho) bounds each term.
    """
    pref = 1.0 / math.sqrt(4 * math.pi * kp.rho)
    arg = math.log(max(pref, 1.0) / kp.tol)
    n = 1 + math.ceil(math.sqrt(4 * kp.rho * arg) / 2.0)
    if 2 * n + 1 > kp.max_terms:
        raise RuntimeError(f"image sum needs {2 * n + 1} terms > max_terms={kp.max_terms} at rho={kp.rho}")
    return n


def rho_tilde_sine(x, y, kp: KernelParams):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_unit(x, y)
    k = np.arange(1, sine_terms(kp) + 1, dtype=float)
    w = 2.0 * np.exp(-(k**2) * math.pi**2 * kp.rho)
    xs = np.sin(np.pi * np.multiply.outer(x, k))
    ys = np.sin(np.pi * np.multiply.outer(y, k))
    return np.sum(w * xs * ys, axis=-1)


def rho_tilde_image(x, y, kp: KernelParams):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_unit(x, y)
    nmax = image_terms(kp)
    n = np.arange(-nmax, nmax + 1, dtype=float)
    d = y - x
    s = y + x
    a = np.exp(-((2 * n + d[..., None]) ** 2) / (4 * kp.rho))
    b = np.exp(-((2 * n + s[..., None]) ** 2) / (4 * kp.rho))
    return np.sum(a - b, axis=-1) / math.sqrt(4 * math.pi * kp.rho)


def rho_tilde(x, y, kp: KernelParams, method: str = "auto"):
    """Evaluate the Dirichlet kernel ``rho~(x, y; rho)``.

    Parameters
    ----------
    x, y : float or array_like
        Points in [0, 1]; broadcast against each other.
    kp : KernelParams
    method : {"auto", "sine", "image"}
        ``auto`` uses the image sum when ``rho < 0.05``.

    Returns
    -------
    float or ndarray
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if method == "auto":
        method = "image" if kp.rho < IMAGE_SWITCH else "sine"
    if method == "sine":
        out = rho_tilde_sine(x, y, kp)
    elif method == "image":
        out = rho_tilde_image(x, y, kp)
    else:
        raise ValueError(f"unknown method {method!r}")
    # exact Dirichlet boundary
    out = np.where((x == 0) | (x == 1) | (y == 0) | (y == 1), 0.0, out)
    return float(out) if out.ndim == 0 else out


def covariance_K(x, y, kp: KernelParams, method: str = "auto"):
    """Noise covariance ``K(x, y; rho) = rho~(x, y; 2 rho)``."""
    return rho_tilde(x, y, kp.doubled(), method=method)


def covariance_K_sine(x, y, kp: KernelParams):
    """Covariance straight from its sine series with weights exp(-2 k^2 pi^2 rho)."""
    return rho_tilde_sine(x, y, kp.doubled())


def _check_trace_domain(kp: KernelParams):
    if kp.rho >= 1:
        raise ValueError("trace and Hilbert-Schmidt bounds need rho < 1")


def _mode_weights_sq(kp: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    # exp(-2 k^2 pi^2 rho) summed until below tol (weights up to k^2 pi^2 included)
    kmax = math.ceil(math.sqrt((math.log(1.0 / kp.tol) + 10.0) / (2 * math.pi**2 * kp.rho))) + 1
    if kmax > kp.max_terms:
        raise RuntimeError("trace series did not converge within max_terms")
    k = np.arange(1, kmax + 1, dtype=float)
    return k, np.exp(-2 * k**2 * math.pi**2 * kp.rho)


def trace_Q(kp: KernelParams) -> float:
    """Trace of the noise covariance operator, ``sum_k exp(-2 k^2 pi^2 rho)``."""
    _check_trace_domain(kp)
    _, w = _mode_weights_sq(kp)
    return float(np.sum(w[::-1]))


def hs_norm_sq_Qpartial(kp: KernelParams) -> float:
    """Squared Hilbert-Schmidt norm of the differentiated noise operator.

    Equals ``(1/2) sum_k k^2 pi^2 exp(-2 k^2 pi^2 rho)``.
    """
    _check_trace_domain(kp)
    k, w = _mode_weights_sq(kp)
    return float(0.5 * np.sum((k**2 * math.pi**2 * w)[::-1]))


def trace_bounds(rho: float) -> tuple[float, float]:
    """Lower and upper bounds on the trace of the noise covariance."""
    lo = math.exp(-2 * math.pi**2) / (4 * math.pi**2 + 1) / math.sqrt(rho)
    return lo, 1.0 / (12 * rho)


def hs_upper_bound(rho: float) -> float:
    return 1.0 / (48 * rho**2)


def pointwise_bounds(x1, x2, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-plus-constant envelopes for ``|rho~|`` and ``|K|``."""
    d2 = (np.asarray(x2) - np.asarray(x1)) ** 2
    r = (np.pi * rho) ** -0.5 * np.exp(-d2 / (4 * rho)) + np.pi**1.5 * rho**0.5 / 6
    k = (2 * np.pi * rho) ** -0.5 * np.exp(-d2 / (8 * rho)) + np.sqrt(2) * np.pi**1.5 * rho**0.5 / 6
    return r, k


def _check_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(p)):
        raise ValueError("points must be finite")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("points must lie strictly inside (0, 1)")
    if p.size > 1 and np.any(np.diff(p) <= 0):
        raise ValueError("points must be distinct and strictly increasing")
    return p


def gram(points, kp: KernelParams) -> GramMatrix:
    """Covariance matrix at ``points`` and its Gersgorin eigenvalue floor.

    The floor is ``min_i [K(x_i, x_i) - sum_{j != i} |K(x_i, x_j)|]``.
    """
    p = _check_points(points)
    ent = covariance_K(p[:, None], p[None, :], kp)
    ent = np.atleast_2d(ent)
    ent = 0.5 * (ent + ent.T)
    off = np.abs(ent).sum(axis=1) - np.abs(np.diag(ent))
    floor = float(np.min(np.diag(ent) - off))
    return GramMatrix(points=p, entries=ent, gersgorin_floor=floor)


def point_constants(points, kp: KernelParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-point constants ``C_x`` and ``C^_x`` controlling the Gram bracketing.

    ``C_x = 2 (1/x^2 + 1/(x-1)^2) + 2 pi^2 / 3`` and
    ``C^_x = C_x / sqrt(8 pi) + sum_{j != i} sqrt(8/pi) / (x_j - x_i)^2 + sqrt(2) pi^(3/2) (n - 1) / 6``.
    They do not depend on ``rho``; ``kp`` is accepted for a uniform signature.
    """
    p = np.asarray(points, dtype=float).ravel()
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("point constants are singular at x = 0 and x = 1")
    if len(np.unique(p)) != len(p):
        raise ValueError("points must be distinct")
    n = p.size
    c = 2 * (1 / p**2 + 1 / (p - 1) ** 2) + 2 * math.pi**2 / 3
    d2 = (p[None, :] - p[:, None]) ** 2
    np.fill_diagonal(d2, np.inf)
    pair = math.sqrt(8 / math.pi) * np.sum(1.0 / d2, axis=1)
    chat = c / math.sqrt(8 * math.pi) + pair + math.sqrt(2) * math.pi**1.5 * (n - 1) / 6
    return c, chat


def bracket(points, kp: KernelParams) -> tuple[float, float]:
    """Bracket ``1/sqrt(8 pi rho) -/+ max C^ sqrt(rho)`` for the Gram spectrum."""
    _, chat = point_constants(points)
    centre = 1 / math.sqrt(8 * math.pi * kp.rho)
    w = float(np.max(chat)) * math.sqrt(kp.rho)
    return centre - w, centre + w


def kl_weights(n_modes: int, rho: float) -> np.ndarray:
    """Noise amplitudes ``exp(-k^2 pi^2 rho)`` for k = 1..n_modes."""
    k = np.arange(1, n_modes + 1, dtype=float)
    return np.exp(-(k**2) * math.pi**2 * rho)


def kl_noise_increment(n_modes: int, dt: float, kp: KernelParams, rng: np.random.Generator, size=None):
    """Karhunen-Loeve increment of the colored noise in the sine basis.

    Returns ``exp(-k^2 pi^2 rho) dB^k`` with independent ``dB^k ~ N(0, dt)``.
    ``size`` prepends extra sample dimensions.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = (n_modes,) if size is None else tuple(np.atleast_1d(size)) + (n_modes,)
    db = math.sqrt(dt) * rng.standard_normal(shape)
    return kl_weights(n_modes, kp.rho) * db
