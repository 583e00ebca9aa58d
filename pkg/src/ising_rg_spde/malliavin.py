"""Linearized operator flows along a path and the integration-by-parts identity.

Along a trajectory ``X`` and for modes ``l_1 < ... < l_n`` the linearization is

    A_ij(t) = <b'(X(t)) e_{l_j}, e_{l_i}> - (l_i pi)^2 K / 4M^2 delta_ij + 2K delta_ij,

``M^(t)`` solves ``dM^/dt = A M^`` with ``M^(0) = I`` and the Volterra operator
``(A r)(t) = r(t) - A(t) int_0^t r`` has the explicit inverse
``l + A M^ int_0^t M^{-1} l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .drift import U_and_prime, bump_normalizer
from .functional import CylindricalObservable
from .kernel import kl_weights
from .solver import Galerkin, ModelParams, NoiseSource, SpectralField, Trajectory, default_initial, n_steps_for, project_initial


@dataclass(frozen=True)
class ModeSet:
    """Spaced modes with the gap required for a gradient cap."""

    modes: tuple
    spacing_bound: float
    cap: float

    def __post_init__(self):
        m = tuple(int(v) for v in self.modes)
        if any(v < 1 for v in m) or any(b <= a for a, b in zip(m, m[1:])):
            raise ValueError("modes must be increasing positive integers")
        object.__setattr__(self, "modes", m)

    @property
    def n(self) -> int:
        return len(self.modes)

    @property
    def satisfies_spacing(self) -> bool:
        m = np.array(self.modes)
        return bool(m.size < 2 or np.min(np.diff(m)) >= self.spacing_bound)


def spacing_bound(mp: ModelParams, n: int, cap: float) -> float:
    """Required gap ``8 N (n + 1) J_hat / (|1 - gamma - eps| eps delta)``."""
    return 8 * cap * (n + 1) * bump_normalizer() / (abs(1 - mp.gamma - mp.epsilon) * mp.epsilon * mp.delta)


def choose_modes(mp: ModelParams, n: int, cap: float) -> ModeSet:
    """Modes ``l_i = i * ceil(gap)`` so every gap (and ``l_1``) meets the bound."""
    gap = spacing_bound(mp, n, cap)
    step = max(1, math.ceil(gap))
    return ModeSet(tuple(step * (i + 1) for i in range(n)), gap, cap)


def _nodes_for(modes: ModeSet, n_field: int) -> int:
    return 4 * max(n_field, max(modes.modes)) + 4


def a_matrix(field_: SpectralField, mp: ModelParams, modes: ModeSet, n_nodes: int | None = None) -> np.ndarray:
    """The symmetric n x n linearization matrix at one time.

    The inner products use the interior uniform rule with ``n_nodes`` points.
    """
    a = np.asarray(field_.sine_coeffs if isinstance(field_, SpectralField) else field_, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("field must be finite")
    Q = n_nodes or _nodes_for(modes, a.size)
    h = 1.0 / (Q + 1)
    xs = np.arange(1, Q + 1) * h
    k = np.arange(1, a.size + 1)
    X = math.sqrt(2) * np.sin(np.pi * np.outer(xs, k)) @ a
    _, up = U_and_prime(X, mp.drift_params)
    bp = up + (1 - mp.gamma)
    l = np.array(modes.modes, dtype=float)
    E = math.sqrt(2) * np.sin(np.pi * np.outer(xs, l))
    A = (E * (bp * h)[:, None]).T @ E
    A = 0.5 * (A + A.T)
    A[np.diag_indices_from(A)] += -((l * math.pi) ** 2) * mp.K / (4 * mp.M**2) + 2 * mp.K
    return A


def gradient_norms(traj: Trajectory) -> np.ndarray:
    k = np.arange(1, traj.n_modes + 1) * math.pi
    return np.sqrt(np.sum((k * traj.coeffs) ** 2, axis=1))


@dataclass
class OperatorFlow:
    """``A`` and ``M^`` on a uniform time grid."""

    times: np.ndarray
    A: np.ndarray  # (n_t, n, n)
    Mhat: np.ndarray  # (n_t, n, n)
    J: np.ndarray | None = None  # J(t_i) = M^(T) M^(t_i)^{-1}
    info: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def condition_numbers(self) -> np.ndarray:
        return np.linalg.cond(self.Mhat)


def step_propagators(times, A, max_hA: float = 0.5) -> np.ndarray:
    """One-step RK4 propagators ``P_i`` with ``M^(t_{i+1}) = P_i M^(t_i)``.

    ``A`` is linearly interpolated inside each step; a step is split into equal
    substeps so that ``h * ||A|| <= max_hA`` (stiff high modes).
    """
    times = np.asarray(times, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = np.broadcast_to(A, (times.size,) + A.shape)
    n = A.shape[-1]
    eye = np.eye(n)
    P = np.empty((times.size - 1, n, n))
    for i in range(times.size - 1):
        H = times[i + 1] - times[i]
        A0, A1 = A[i], A[i + 1]
        norm = max(np.abs(A0).sum(axis=1).max(), np.abs(A1).sum(axis=1).max())
        sub = max(1, math.ceil(H * norm / max_hA))
        h = H / sub
        Pi = eye
        for j in range(sub):
            s0, s1 = j / sub, (j + 1) / sub
            Aa = A0 + s0 * (A1 - A0)
            Am = A0 + 0.5 * (s0 + s1) * (A1 - A0)
            Ab = A0 + s1 * (A1 - A0)
            k1 = Aa
            k2 = Am @ (eye + 0.5 * h * k1)
            k3 = Am @ (eye + 0.5 * h * k2)
            k4 = Ab @ (eye + h * k3)
            Pi = (eye + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)) @ Pi
        if not np.all(np.isfinite(Pi)):
            raise FloatingPointError(f"fundamental solution became non-finite at step {i + 1}")
        P[i] = Pi
    return P


def fundamental_solution(times, A, max_hA: float = 0.5) -> np.ndarray:
    """Classical RK4 for ``dM/dt = A(t) M``, ``M(0) = I``; midpoint ``A`` by linear interpolation."""
    P = step_propagators(times, A, max_hA)
    n = P.shape[-1]
    M = np.empty((P.shape[0] + 1, n, n))
    M[0] = np.eye(n)
    for i in range(P.shape[0]):
        M[i + 1] = P[i] @ M[i]
    return M


def build_flow(times, A) -> OperatorFlow:
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = np.broadcast_to(A, (len(times),) + A.shape).copy()
    P = step_propagators(times, A)
    n = A.shape[-1]
    M = np.empty((P.shape[0] + 1, n, n))
    M[0] = np.eye(n)
    for i in range(P.shape[0]):
        M[i + 1] = P[i] @ M[i]
    # J(t_i) = M^(T) M^(t_i)^{-1} as a backward product of step propagators
    J = np.empty_like(M)
    J[-1] = np.eye(n)
    for i in range(P.shape[0] - 1, -1, -1):
        J[i] = J[i + 1] @ P[i]
    return OperatorFlow(np.asarray(times, dtype=float), A, M, J)


def flow_along(traj: Trajectory, mp: ModelParams, modes: ModeSet) -> OperatorFlow:
    """Evaluate ``A`` at every stored step of ``traj`` and integrate ``M^``."""
    Q = _nodes_for(modes, traj.n_modes)
    A = np.stack([a_matrix(c, mp, modes, Q) for c in traj.coeffs])
    flow = build_flow(traj.times, A)
    flow.info["grad_norm_max"] = float(gradient_norms(traj).max())
    return flow


def _left_integral(f, dt):
    """``int_0^{t_m} f`` by the left-endpoint rule, for every grid index m."""
    out = np.zeros_like(f)
    out[1:] = np.cumsum(f[:-1], axis=0) * dt
    return out


def apply_A(flow: OperatorFlow, r) -> np.ndarray:
    """``(A r)(t) = r(t) - A(t) int_0^t r``."""
    r = np.asarray(r, dtype=float)
    R = _left_integral(r, flow.dt)
    return r - np.einsum("tij,tj->ti", flow.A, R)


def apply_A_inverse(flow: OperatorFlow, l) -> np.ndarray:
    """``l(t) + A(t) M^(t) int_0^t M^(s)^{-1} l(s) ds``."""
    l = np.asarray(l, dtype=float)
    Minv_l = np.linalg.solve(flow.Mhat, l[..., None])[..., 0]
    I = _left_integral(Minv_l, flow.dt)
    return l + np.einsum("tij,tj->ti", flow.A, np.einsum("tij,tj->ti", flow.Mhat, I))


def apply_A_adjoint(flow: OperatorFlow, q) -> np.ndarray:
    """``(A* q)(s) = q(s) - int_s^T A(t)^T q(t) dt`` (right-endpoint rule)."""
    q = np.asarray(q, dtype=float)
    g = np.einsum("tji,tj->ti", flow.A, q)
    tail = np.zeros_like(g)
    tail[:-1] = np.cumsum(g[:0:-1], axis=0)[::-1] * flow.dt
    return q - tail


def apply_A_adjoint_inverse(flow: OperatorFlow, l) -> np.ndarray:
    """Inverse of the adjoint for a deterministic symmetric ``A``.

    ``q(s) = l(s) + M^(s)^{-T} int_s^T M^(t)^T A(t) l(t) dt``.  For random
    ``A`` the conditional expectations reduce to this only when ``A`` does not
    depend on the path.
    """
    l = np.asarray(l, dtype=float)
    g = np.einsum("tji,tj->ti", flow.Mhat, np.einsum("tij,tj->ti", flow.A, l))
    tail = np.zeros_like(g)
    tail[:-1] = np.cumsum(g[:0:-1], axis=0)[::-1] * flow.dt
    MT = np.transpose(flow.Mhat, (0, 2, 1))
    return l + np.linalg.solve(MT, tail[..., None])[..., 0]


@dataclass
class JBoundReport:
    status: str  # "checked" or "skipped"
    n_samples: int
    n_violations: int
    max_ratio: float
    rate: float
    reason: str = ""
    n_excluded: int = 0

    @property
    def passed(self) -> bool:
        return self.status == "skipped" or self.n_violations == 0


def j_bound_check(
    flow: OperatorFlow,
    mp: ModelParams,
    modes: ModeSet,
    n_samples: int = 10_000,
    seed: int = 0,
    grad_norm_max: float | None = None,
) -> JBoundReport:
    """Sample ``||J(s)^T y||^2 <= exp(c (T - s)) ||y||^2`` with ``J(s) = M^(T) M^(s)^{-1}``.

    ``c = 1 - gamma - eps + 4K``.  Skipped (not failed) when the modes violate
    the spacing rule or the path breached the gradient cap.
    """
    rate = mp.lsi_rate
    gmax = flow.info.get("grad_norm_max") if grad_norm_max is None else grad_norm_max
    if not modes.satisfies_spacing:
        return JBoundReport("skipped", 0, 0, math.nan, rate, "mode spacing below the required gap")
    if gmax is not None and gmax > modes.cap:
        return JBoundReport("skipped", 0, 0, math.nan, rate, f"gradient norm {gmax:.4g} exceeded cap {modes.cap}", 1)
    g = np.random.default_rng(seed)
    T = flow.times[-1]
    idx = g.integers(0, flow.times.size, n_samples)
    y = g.standard_normal((n_samples, modes.n))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    J = flow.J
    if J is None:
        J = np.linalg.solve(np.transpose(flow.Mhat, (0, 2, 1)), flow.Mhat[-1].T).transpose(0, 2, 1)
    Jy = np.einsum("sji,sj->si", J[idx], y)  # J(s)^T y
    lhs = np.sum(Jy**2, axis=1)
    rhs = np.exp(rate * (T - flow.times[idx]))
    ratio = lhs / rhs
    viol = int(np.sum(lhs > rhs * (1 + 1e-12)))
    return JBoundReport("checked", n_samples, viol, float(ratio.max()), rate)


# integration by parts ------------------------------------------------------


@dataclass
class IBPResult:
    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    stderr_diff: float
    replicas: int
    config: dict = field(default_factory=dict)

    @property
    def z(self) -> float:
        if self.stderr_diff == 0:
            return 0.0 if self.lhs == self.rhs else math.inf
        return abs(self.lhs - self.rhs) / self.stderr_diff

    @property
    def passed(self) -> bool:
        return abs(self.lhs - self.rhs) <= 3 * self.stderr_diff + 1e-14


def verify_ibp(
    mp: ModelParams,
    observable: CylindricalObservable,
    m: int,
    h_m,
    replicas: int,
    seed: int,
    n_modes: int = 4,
    dt: float = 1e-3,
    u0=default_initial,
    threads: int | None = None,
    block_size: int = 4096,
) -> IBPResult:
    """Monte Carlo check of ``E[D_h F] = E[F int <k, dW>]`` for ``h = sin(m pi x) h_m(t)``.

    The discrete scheme is perturbed exactly: shifting the increments of every
    mode ``j`` by ``kappa_{n,j} dt`` with

        kappa_{n,j} = [(1 + dt L_j) eta_{n+1,j} - eta_{n,j} - dt (2K eta_{n,j} + P_j(b'(X_n) eta_n))] / (lambda_j dt),

    ``eta_n = h_m(t_n) / sqrt(2)`` in mode ``m``, moves the solution by
    ``eta`` to first order.  The Gaussian density ratio then gives
    ``rhs = E[F sum_n kappa_n . dB_n]``; ``lhs = E[f'(X(x_1, T)) sin(m pi x_1) h_m(T)]``.

    Parameters
    ----------
    h_m : callable
        Scalar time profile with ``h_m(0) = 0``.
    replicas : int
        At least 1000.
    """
    if replicas < 1000:
        raise ValueError("verify_ibp needs at least 1000 replicas")
    if observable.n != 1:
        raise ValueError("verify_ibp handles one-point observables")
    if not 1 <= m <= n_modes:
        raise ValueError("mode m must be one of the simulated modes")
    steps = n_steps_for(mp.T, dt)
    times = np.arange(steps + 1) * dt
    hv = np.array([float(h_m(t)) for t in times])
    if abs(hv[0]) > 1e-14:
        raise ValueError("h_m(0) must vanish")
    eta = hv / math.sqrt(2)
    g = Galerkin(mp, n_modes, dt)
    a0 = project_initial(u0, n_modes)
    x1 = float(observable.points[0])
    k = np.arange(1, n_modes + 1)
    ex1 = math.sqrt(2) * np.sin(np.pi * k * x1)
    em_nodes = g.S[:, m - 1]
    lam = kl_weights(n_modes, mp.rho)
    sin_m = math.sin(m * math.pi * x1)

    def run_block(block):
        B = len(block)
        a = np.tile(a0, (B, 1))
        score = np.zeros(B)
        noise = NoiseSource(seed, list(block), n_modes, dt)
        for n in range(steps):
            db = noise.next()
            X = a @ g.S.T
            u, up = U_and_prime(X, g.dp)
            bp = up + (1 - mp.gamma)
            if eta[n] != 0.0 or eta[n + 1] != 0.0:
                q = (bp * (eta[n] * em_nodes)) @ g.S_proj  # (B, N)
                kappa = -dt * q
                kappa[:, m - 1] += g.denom[m - 1] * eta[n + 1] - eta[n] - dt * 2 * mp.K * eta[n]
                kappa /= lam * dt
                score += np.sum(kappa * db, axis=1)
            proj = (u + (1 - mp.gamma) * X) @ g.S_proj
            a = (a + dt * (2 * mp.K * a + proj) + lam * db) / g.denom
        XT = (a @ ex1)[:, None]
        F = np.asarray(observable.f(XT), dtype=float).ravel()
        dF = np.asarray(observable.grad_f(XT), dtype=float)[:, 0]
        return dF * sin_m * hv[-1], F * score

    blocks = _rng.replica_blocks(replicas, block_size)
    parts = _rng.map_blocks(run_block, blocks, threads)
    L = np.concatenate([p[0] for p in parts])
    Rr = np.concatenate([p[1] for p in parts])
    sq = math.sqrt(replicas)
    return IBPResult(
        float(L.mean()),
        float(Rr.mean()),
        float(L.std(ddof=1) / sq),
        float(Rr.std(ddof=1) / sq),
        float((L - Rr).std(ddof=1) / sq),
        replicas,
        {"m": m, "x1": x1, "n_modes": n_modes, "dt": dt, "T": mp.T, "seed": seed, "observable": observable.name},
    )
