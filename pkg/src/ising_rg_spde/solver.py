"""Spectral Galerkin integration of the regularized SPDE on (0, 1).

The field is ``X(x, t) = sum_k a_k(t) sqrt(2) sin(k pi x)``; each step is

    a_k <- [a_k + dt (2K a_k + <b(X), e_k>) + exp(-k^2 pi^2 rho) dB^k] / (1 + dt K k^2 pi^2 / 4M^2)

with the Laplacian implicit and the drift explicit.  ``<b(X), e_k>`` is computed
by collocation at ``Q = 4N`` interior nodes ``q / (Q + 1)`` (a DST-I rule, exact
for band-limited integrands of degree < 2(Q + 1)).  The gradient field
``v = dX/dx`` is carried on the cosine basis ``sqrt(2) cos(k pi x)`` and driven by
the same increments ``dB^k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .drift import DriftParams, U_and_prime
from .kernel import KernelParams, kl_weights


class BlowUpError(FloatingPointError):
    """Raised when the state becomes non-finite."""

    def __init__(self, step: int, time: float, replica: int | None = None):
        self.step = step
        self.time = time
        self.replica = replica
        where = "" if replica is None else f" (replica {replica})"
        super().__init__(f"non-finite state at step {step}, t={time:.6g}{where}; reduce dt")


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the SPDE.

    ``strict=False`` relaxes the ``delta < 1`` bound to ``delta <= 1`` (needed at
    the T = 1 edge of the renormalization schedules).
    """

    K: float
    gamma: float
    epsilon: float
    delta: float
    rho: float
    M: float = 1.0
    T: float = 1.0
    strict: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.K >= 0):
            raise ValueError("K must be nonnegative")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        # delegate remaining range checks
        self.drift_params
        self.kernel_params

    @property
    def drift_params(self) -> DriftParams:
        return DriftParams(self.epsilon, self.delta, self.gamma, strict=self.strict)

    @property
    def kernel_params(self) -> KernelParams:
        return KernelParams(self.rho)

    @property
    def lsi_rate(self) -> float:
        """``1 - gamma - eps + 4K``."""
        return 1 - self.gamma - self.epsilon + 4 * self.K

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


def max_stable_dt(mp: ModelParams, n_modes: int) -> float:
    """Guard ``1e-2 * min(1, 4 M^2 / (K N^2 pi^2))``."""
    if mp.K == 0:
        return 1e-2
    return 1e-2 * min(1.0, 4 * mp.M**2 / (mp.K * n_modes**2 * math.pi**2))


def check_dt(mp: ModelParams, n_modes: int, dt: float):
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError("dt must be positive")
    lim = max_stable_dt(mp, n_modes)
    if dt > lim * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds the stability guard {lim:.6g} for N={n_modes}")


def n_steps_for(T: float, dt: float) -> int:
    return max(1, math.ceil(T / dt - 1e-9))


@dataclass
class SpectralField:
    """Sine-mode coefficients ``a_k``, k = 1..N."""

    sine_coeffs: np.ndarray
    time: float = 0.0


@dataclass
class GradientField:
    """Cosine-mode coefficients ``c_k``, k = 1..N."""

    cos_coeffs: np.ndarray
    time: float = 0.0


class Galerkin:
    """Precomputed collocation data and single-step updates for ``N`` modes."""

    def __init__(self, mp: ModelParams, n_modes: int, dt: float, check: bool = True, colloc: int = 4):
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        if colloc < 2:
            raise ValueError("colloc must be >= 2")
        if check:
            check_dt(mp, n_modes, dt)
        self.mp = mp
        self.dp = mp.drift_params
        self.N = n_modes
        self.dt = dt
        self.Q = colloc * n_modes
        k = np.arange(1, n_modes + 1, dtype=float)
        self.k = k
        h = 1.0 / (self.Q + 1)
        xs = np.arange(1, self.Q + 1) * h
        self.nodes = xs
        self.S = math.sqrt(2) * np.sin(np.pi * np.outer(xs, k))  # (Q, N)
        self.S_proj = self.S * h
        xc = np.arange(0, self.Q + 2) * h
        wc = np.full(xc.size, h)
        wc[[0, -1]] = 0.5 * h
        self.cos_nodes = xc
        self.Sc = math.sqrt(2) * np.sin(np.pi * np.outer(xc, k))  # sine basis on closed grid
        self.C = math.sqrt(2) * np.cos(np.pi * np.outer(xc, k))  # (Q+2, N)
        self.C_proj = self.C * wc[:, None]
        self.lam = kl_weights(n_modes, mp.rho)
        self.lap = mp.K * (k * math.pi) ** 2 / (4 * mp.M**2)
        self.denom = 1.0 + dt * self.lap

    def field_at_nodes(self, a):
        return a @ self.S.T

    def drift_projection(self, a):
        u, _ = U_and_prime(a @ self.S.T, self.dp)
        bx = u + (1 - self.mp.gamma) * (a @ self.S.T)
        return bx @ self.S_proj

    def step(self, a, db):
        """One semi-implicit step; ``db`` are raw increments with variance ``dt``."""
        X = a @ self.S.T
        u, _ = U_and_prime(X, self.dp)
        proj = (u + (1 - self.mp.gamma) * X) @ self.S_proj
        return (a + self.dt * (2 * self.mp.K * a + proj) + self.lam * db) / self.denom

    def grad_step(self, a, c, db, noise: bool = True):
        """Step of the gradient equation using the field ``a`` at the start of the step."""
        X = a @ self.Sc.T
        _, up = U_and_prime(X, self.dp)
        bp = up + (1 - self.mp.gamma)
        proj = (bp * (c @ self.C.T)) @ self.C_proj
        rhs = c + self.dt * (2 * self.mp.K * c + proj)
        if noise:
            rhs = rhs + self.k * math.pi * self.lam * db
        return rhs / self.denom

    def step_both(self, a, c, db):
        """Advance field and gradient together with shared increments."""
        return self.step(a, db), self.grad_step(a, c, db)


def project_initial(u0, n_modes: int) -> np.ndarray:
    """Sine coefficients of ``u0``: either given coefficients or a callable on (0, 1)."""
    if callable(u0):
        Q = 4 * n_modes
        h = 1.0 / (Q + 1)
        xs = np.arange(1, Q + 1) * h
        k = np.arange(1, n_modes + 1)
        S = math.sqrt(2) * np.sin(np.pi * np.outer(xs, k))
        vals = np.asarray(u0(xs), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("initial condition is not finite")
        for end in (0.0, 1.0):
            if abs(float(u0(np.array([end]))[0])) > 1e-12:
                raise ValueError("initial condition must vanish at x = 0 and x = 1")
        return vals @ S * h
    a = np.asarray(u0, dtype=float).ravel()
    if a.size > n_modes:
        raise ValueError("more initial coefficients than modes")
    out = np.zeros(n_modes)
    out[: a.size] = a
    if not np.all(np.isfinite(out)):
        raise ValueError("initial condition is not finite")
    return out


def default_initial(x):
    """``0.1 sin(pi x)``."""
    return 0.1 * np.sin(np.pi * np.asarray(x))


@dataclass
class Trajectory:
    """A single sample path with its retained raw Brownian increments."""

    mp: ModelParams
    dt: float
    times: np.ndarray
    coeffs: np.ndarray  # (steps + 1, N)
    increments: np.ndarray | None  # (steps, N), variance dt
    seed: int
    replica: int = 0
    colloc: int = 4

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]

    def field(self, step: int) -> SpectralField:
        return SpectralField(self.coeffs[step].copy(), float(self.times[step]))


@dataclass
class GradientTrajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (steps + 1, N)

    def field(self, step: int) -> GradientField:
        return GradientField(self.coeffs[step].copy(), float(self.times[step]))


class NoiseSource:
    """Raw increments for a block of replicas, drawn in time chunks.

    Each replica consumes its own stream strictly in step order, so the values
    do not depend on the chunk length or on how replicas are grouped.
    """

    def __init__(self, seed: int, replicas, n_modes: int, dt: float, chunk: int = 256):
        self.gens = [_rng.replica_generator(seed, r) for r in replicas]
        self.N = n_modes
        self.sd = math.sqrt(dt)
        self.chunk = chunk
        self._buf = None
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._buf is None or self._pos >= self._buf.shape[0]:
            self._buf = np.stack([g.standard_normal((self.chunk, self.N)) for g in self.gens], axis=1) * self.sd
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def simulate(
    mp: ModelParams, u0=default_initial, n_modes: int = 32, dt: float = 1e-3, seed: int = 0, replica: int = 0, colloc: int = 4
) -> Trajectory:
    """Integrate one sample path up to ``mp.T``.

    Parameters
    ----------
    mp : ModelParams
    u0 : array_like or callable
        Initial sine coefficients, or a function on (0, 1) vanishing at the ends.
    n_modes : int
    dt : float
        Must satisfy the stability guard ``dt <= 1e-2 min(1, 4M^2/(K N^2 pi^2))``.
    seed, replica : int
        Master seed and replica index selecting the random stream.
    colloc : int
        Collocation nodes per mode (``Q = colloc * N``).

    Returns
    -------
    Trajectory
        All coefficients and the raw increments, reproducible from ``seed``.
    """
    g = Galerkin(mp, n_modes, dt, colloc=colloc)
    steps = n_steps_for(mp.T, dt)
    a = project_initial(u0, n_modes)
    coeffs = np.empty((steps + 1, n_modes))
    inc = np.empty((steps, n_modes))
    coeffs[0] = a
    noise = NoiseSource(seed, [replica], n_modes, dt)
    for n in range(steps):
        db = noise.next()[0]
        inc[n] = db
        a = g.step(a, db)
        if not np.all(np.isfinite(a)):
            raise BlowUpError(n + 1, (n + 1) * dt, replica)
        coeffs[n + 1] = a
    times = np.arange(steps + 1) * dt
    return Trajectory(mp, dt, times, coeffs, inc, seed, replica, colloc)


def simulate_gradient(mp: ModelParams, traj: Trajectory, v0=None, noise: bool = True) -> GradientTrajectory:
    """Integrate the gradient equation along ``traj`` with its own increments.

    ``v0`` defaults to the derivative of the initial field, ``c_k = k pi a_k(0)``.
    """
    if traj.increments is None:
        raise ValueError("trajectory does not retain its Brownian increments")
    N = traj.n_modes
    g = Galerkin(mp, N, traj.dt, colloc=traj.colloc)
    c = g.k * math.pi * traj.coeffs[0] if v0 is None else np.asarray(v0, dtype=float).copy()
    if c.shape != (N,):
        raise ValueError("v0 must have one coefficient per mode")
    out = np.empty_like(traj.coeffs)
    out[0] = c
    for n in range(traj.increments.shape[0]):
        c = g.grad_step(traj.coeffs[n], c, traj.increments[n], noise=noise)
        if not np.all(np.isfinite(c)):
            raise BlowUpError(n + 1, (n + 1) * traj.dt, traj.replica)
        out[n + 1] = c
    return GradientTrajectory(traj.times.copy(), out)


@dataclass
class Ensemble:
    """Snapshots of many replicas at recorded steps.

    ``coeffs`` has shape ``(n_records, R, N)``; ``grad`` likewise when the
    gradient equation was integrated alongside.
    """

    mp: ModelParams
    dt: float
    seed: int
    steps: np.ndarray
    times: np.ndarray
    coeffs: np.ndarray
    grad: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return self.coeffs.shape[1]

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} was not recorded")
        return self.coeffs[i]


def record_steps_for(times, dt: float) -> np.ndarray:
    steps = []
    for t in np.atleast_1d(times):
        s = round(t / dt)
        if abs(s * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"record time {t} is not on the dt grid")
        steps.append(s)
    return np.array(sorted(set(steps)), dtype=int)


def simulate_ensemble(
    mp: ModelParams,
    u0=default_initial,
    n_modes: int = 32,
    dt: float = 1e-3,
    seed: int = 0,
    replicas: int = 1000,
    record_times=None,
    with_gradient: bool = False,
    threads: int | None = None,
    block_size: int = 256,
    first_replica: int = 0,
    check_dt_guard: bool = True,
) -> Ensemble:
    """Integrate ``replicas`` independent paths and keep snapshots.

    Replicas are processed in fixed blocks of ``block_size`` and reassembled in
    index order, so the output is bitwise independent of ``threads``.
    """
    g = Galerkin(mp, n_modes, dt, check=check_dt_guard)
    steps_total = n_steps_for(mp.T, dt)
    rec = record_steps_for([mp.T] if record_times is None else record_times, dt)
    if rec[-1] > steps_total:
        raise ValueError("record time beyond T")
    a0 = project_initial(u0, n_modes)
    c0 = g.k * math.pi * a0

    def run_block(block):
        B = len(block)
        a = np.tile(a0, (B, 1))
        c = np.tile(c0, (B, 1)) if with_gradient else None
        noise = NoiseSource(seed, [first_replica + r for r in block], n_modes, dt)
        out = np.empty((rec.size, B, n_modes))
        gout = np.empty((rec.size, B, n_modes)) if with_gradient else None
        j = 0
        if rec[0] == 0:
            out[0] = a
            if with_gradient:
                gout[0] = c
            j = 1
        for n in range(rec[-1]):
            db = noise.next()
            # overflow is reported through BlowUpError below
            with np.errstate(over="ignore", invalid="ignore"):
                if with_gradient:
                    a, c = g.step_both(a, c, db)
                else:
                    a = g.step(a, db)
            if not np.all(np.isfinite(a)):
                bad = int(np.nonzero(~np.all(np.isfinite(a), axis=1))[0][0])
                raise BlowUpError(n + 1, (n + 1) * dt, first_replica + block[bad])
            if j < rec.size and rec[j] == n + 1:
                out[j] = a
                if with_gradient:
                    gout[j] = c
                j += 1
        return out, gout

    blocks = _rng.replica_blocks(replicas, block_size)
    results = _rng.map_blocks(run_block, blocks, threads)
    coeffs = np.concatenate([r[0] for r in results], axis=1)
    grad = np.concatenate([r[1] for r in results], axis=1) if with_gradient else None
    return Ensemble(mp, dt, seed, rec, rec * dt, coeffs, grad, {"n_modes": n_modes, "block_size": block_size})


def field_norms(f) -> tuple[float, float]:
    """``(||f||_L2, ||df/dx||_L2)`` by Parseval.

    Works for SpectralField, GradientField or raw coefficient arrays (last axis
    = modes; raw arrays are treated as sine coefficients).
    """
    if isinstance(f, GradientField):
        c = np.asarray(f.cos_coeffs, dtype=float)
    elif isinstance(f, SpectralField):
        c = np.asarray(f.sine_coeffs, dtype=float)
    else:
        c = np.asarray(f, dtype=float)
    k = np.arange(1, c.shape[-1] + 1)
    l2 = np.sqrt(np.sum(c**2, axis=-1))
    h1 = np.sqrt(np.sum((k * math.pi * c) ** 2, axis=-1))
    if np.ndim(l2) == 0:
        return float(l2), float(h1)
    return l2, h1


def norms_sq(coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Squared L2 norm and squared gradient norm for coefficient arrays."""
    c = np.asarray(coeffs, dtype=float)
    k = np.arange(1, c.shape[-1] + 1)
    return np.sum(c**2, axis=-1), np.sum((k * math.pi * c) ** 2, axis=-1)


def evaluate(f, x):
    """Point values of a sine field (or cosine field for GradientField)."""
    x = np.asarray(x, dtype=float)
    if isinstance(f, GradientField):
        c = np.asarray(f.cos_coeffs, dtype=float)
        basis = np.cos
    else:
        c = np.asarray(f.sine_coeffs if isinstance(f, SpectralField) else f, dtype=float)
        basis = np.sin
    k = np.arange(1, c.shape[-1] + 1)
    vals = math.sqrt(2) * basis(np.pi * np.multiply.outer(x, k))
    out = vals @ c.T if c.ndim > 1 else vals @ c
    if basis is np.sin:
        out = np.where(np.reshape((x == 0) | (x == 1), np.shape(x) + (1,) * (np.ndim(out) - np.ndim(x))), 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def ou_moments(mp: ModelParams, a0, n_modes: int, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-mode mean and variance in the linear zone of the drift.

    Each mode is Ornstein-Uhlenbeck with rate
    ``mu_k = -K k^2 pi^2 / 4M^2 + 2K + 1 - gamma - eps`` and noise amplitude
    ``exp(-k^2 pi^2 rho)``.
    """
    k = np.arange(1, n_modes + 1, dtype=float)
    mu = -mp.K * (k * math.pi) ** 2 / (4 * mp.M**2) + 2 * mp.K + 1 - mp.gamma - mp.epsilon
    lam = kl_weights(n_modes, mp.rho)
    mean = np.asarray(a0, dtype=float) * np.exp(mu * t)
    var = lam**2 * np.expm1(2 * mu * t) / (2 * mu)
    return mean, var


def scheme_moments(mp: ModelParams, a0, n_modes: int, dt: float, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and variance of the discrete scheme in the linear zone."""
    g = Galerkin(mp, n_modes, dt, check=False)
    slope = 1 - mp.gamma - mp.epsilon
    r = (1 + dt * (2 * mp.K + slope)) / g.denom
    s2 = (g.lam / g.denom) ** 2 * dt
    mean = np.asarray(a0, dtype=float) * r**steps
    var = s2 * (1 - r ** (2 * steps)) / (1 - r**2)
    return mean, var
