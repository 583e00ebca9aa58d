"""Renormalization schedules, the log-Sobolev constant C(T), and lattice correlation decay.

Two schedules are provided:

``ronrel``  K = T^-kappa, eps = delta = rho = 1/T, gamma = n^2 gamma*, M fixed.
``renrela`` as above with gamma* = T and M = T^(1/3) (lattice sites l map to
            x = (l + M) / 2M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functional import covariance_check, lsi_factor
from .kernel import point_constants
from .solver import ModelParams, max_stable_dt, simulate_ensemble

VARIANTS = ("ronrel", "renrela")


@dataclass(frozen=True)
class RGSchedule:
    """Power-law parameter schedule.

    Attributes
    ----------
    kappa : float
        Coupling exponent, ``K = T^-kappa`` (or ``1 / (1 + T^kappa)`` when
        ``shifted_K``).
    gamma_star : float
        Reduced confinement, > 1; ignored by ``renrela`` where it equals T.
    n : int
        Number of points of the observable; ``gamma = n^2 gamma*``.
    variant : {"ronrel", "renrela"}
    M : float
        Half-width for ``ronrel``.
    """

    kappa: float = 1.0
    gamma_star: float = 2.0
    n: int = 1
    variant: str = "ronrel"
    M: float = 1.0
    shifted_K: bool = False

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.gamma_star > 1:
            raise ValueError("gamma_star must exceed 1")
        if int(self.n) < 1:
            raise ValueError("n must be a positive integer")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.M > 0:
            raise ValueError("M must be positive")

    def gamma_star_at(self, T: float) -> float:
        return T if self.variant == "renrela" else self.gamma_star


def params_at(schedule: RGSchedule, T: float, strict: bool = True) -> ModelParams:
    """Model parameters at terminal time ``T``.

    ``T > 1`` is required so that eps, delta, rho < 1; ``strict=False`` admits
    the edge ``T = 1`` (eps = delta = rho = 1).
    """
    if not math.isfinite(T) or T < 1 or (strict and T <= 1):
        raise ValueError(f"T must exceed 1, got {T}")
    K = 1.0 / (1.0 + T**schedule.kappa) if schedule.shifted_K else T ** (-schedule.kappa)
    inv = 1.0 / T
    gamma = schedule.n**2 * schedule.gamma_star_at(T)
    M = T ** (1.0 / 3.0) if schedule.variant == "renrela" else schedule.M
    return ModelParams(K=K, gamma=gamma, epsilon=inv, delta=inv, rho=inv, M=M, T=T, strict=strict)


def T_from_params(mp: ModelParams) -> float:
    """Invert the schedule through ``rho = 1 / T``."""
    return 1.0 / mp.rho


@dataclass
class CReport:
    T: float
    C_display: float
    C_inline: float
    limit: float
    gap: float
    gap_inline: float

    @property
    def rel_gap(self) -> float:
        return self.gap / self.limit


def lsi_constant_C(schedule: RGSchedule, T: float, max_chat: float) -> CReport:
    """The schedule's log-Sobolev constant and its T -> infinity limit ``2/(gamma* - 1)``.

    Two denominators appear for the exponential factor: ``n^2 T - n^2 gamma* T - 1 + 4 T^(1-kappa)``
    (``C_display``) and ``T - n^2 gamma* T - 1 + 4 T^(1-kappa)`` (``C_inline``);
    both are returned.  The exponent is ``T - n^2 gamma* T - 1 + 4 T^(1-kappa)``.
    """
    w = math.sqrt(8 * math.pi) * max_chat
    if not T > w:
        raise ValueError(f"T={T} must exceed sqrt(8 pi) max C^ = {w:.6g}")
    n2 = schedule.n**2
    gs = schedule.gamma_star_at(T)
    expo = T - n2 * gs * T - 1 + 4 * T ** (1 - schedule.kappa)
    num = 2 * T * n2 * math.expm1(expo)
    ratio = (T + w) / (T - w)
    d_disp = n2 * T - n2 * gs * T - 1 + 4 * T ** (1 - schedule.kappa)
    d_inl = expo
    C_disp = num / d_disp * ratio
    C_inl = num / d_inl * ratio
    limit = 2.0 / (gs - 1)
    return CReport(T, C_disp, C_inl, limit, abs(C_disp - limit), abs(C_inl - limit))


def site_to_x(site: int, M: float) -> float:
    return (site + M) / (2 * M)


def lattice_point_constants(l: int, k: int, M: float) -> tuple[np.ndarray, np.ndarray]:
    """``C_x`` and ``C^_x`` at the two mapped sites (n = 2 pair term included)."""
    return point_constants([site_to_x(l, M), site_to_x(k, M)])


def corollary_bound(T: float, l: int, k: int, kappa: float = 1.0, n: int = 1) -> float:
    """Lattice covariance bound with ``gamma* = T``:

    ``T n^2 (e^{cT} - 1) / (cT) * sqrt((T + C_1)(T + C_2)) / (T - sqrt(8 pi) max C^)``
    with ``cT = T - n^2 T^2 - 1 + 4 T^(1-kappa)``.  Negative values flag that the
    denominator has not yet turned positive.
    """
    M = T ** (1 / 3)
    c, chat = lattice_point_constants(l, k, M)
    cT = T - n * n * T * T - 1 + 4 * T ** (1 - kappa)
    pref = T * n * n * math.expm1(cT) / cT
    return pref * math.sqrt((T + c[0]) * (T + c[1])) / (T - math.sqrt(8 * math.pi) * float(chat.max()))


def covariance_bound(mp: ModelParams, x1: float, x2: float) -> float:
    """Deterministic covariance bound at ``mp`` (same formula as ``covariance_check``)."""
    from .functional import gram_floor
    from .kernel import covariance_K

    kp = mp.kernel_params
    k11 = covariance_K(x1, x1, kp)
    k22 = covariance_K(x2, x2, kp)
    c1, _ = gram_floor([x1], kp)
    c2, _ = gram_floor([x2], kp)
    return abs(lsi_factor(mp)) * math.sqrt(k11 * k22 / (c1 * c2))


def default_T_grid(j_max: int = 10) -> list[float]:
    return [2.0**j for j in range(1, j_max + 1)]


def auto_modes(T: float, floor: int = 8, cap: int = 64) -> int:
    """Enough modes that the dropped noise variance ``exp(-2k^2 pi^2 / T)`` is below 1e-8."""
    k = math.ceil(math.sqrt(T * math.log(1e8) / (2 * math.pi**2)))
    return int(min(cap, max(floor, k)))


def auto_dt(mp: ModelParams, n_modes: int, courant: float = 0.05) -> float:
    """Step bounded by the guard and by ``courant / (gamma + 1/eps)`` for the explicit drift."""
    return min(max_stable_dt(mp, n_modes), courant / (mp.gamma + 1 / mp.epsilon))


@dataclass
class FlowRow:
    T: float
    K: float
    gamma: float
    epsilon: float
    delta: float
    rho: float
    M: float
    cov: float
    cov_stderr: float
    bound: float
    C_T: float
    verdict: str = ""
    info: dict = field(default_factory=dict)

    COLUMNS = ("T", "K", "gamma", "epsilon", "delta", "rho", "M", "cov", "cov_stderr", "bound", "C_T")

    def row(self) -> dict:
        return {c: getattr(self, c) for c in self.COLUMNS}


def correlation_flow(
    schedule: RGSchedule,
    l: int,
    k: int,
    T_grid,
    replicas: int,
    seed: int,
    n_modes: int | None = None,
    burn: float = 20.0,
    threads: int | None = None,
) -> list[FlowRow]:
    """Covariance of the field at two lattice sites along the lattice schedule.

    For every ``T`` the sites map to ``x = (site + M) / 2M`` and the SPDE is run
    with the schedule's parameters.  Because the dynamics at fixed ``T`` relax
    at rate ``|1 - gamma - eps + 2K| ~ T``, only the final window of length
    ``burn / |rate|`` (at most ``T``) is integrated from the initial field; the
    memory of the start decays like ``exp(-burn)``.

    Rows with a site outside ``(-M, M)`` are kept with verdict ``SKIPPED``.
    """
    if not l < k:
        raise ValueError("sites must satisfy l < k")
    if schedule.variant != "renrela":
        raise ValueError("correlation_flow uses the lattice schedule")
    rows = []
    for j, T in enumerate(T_grid):
        mp_full = params_at(schedule, T)
        M = mp_full.M
        if not (-M < l and k < M):
            rows.append(
                FlowRow(T, mp_full.K, mp_full.gamma, mp_full.epsilon, mp_full.delta, mp_full.rho, M, math.nan, math.nan, math.nan, math.nan, "SKIPPED", {"reason": f"site outside (-{M:.4g}, {M:.4g})"})
            )
            continue
        x1, x2 = site_to_x(l, M), site_to_x(k, M)
        N = n_modes or auto_modes(T)
        dt = auto_dt(mp_full, N)
        rate = abs(1 - mp_full.gamma - mp_full.epsilon + 2 * mp_full.K)
        window = min(T, burn / rate)
        steps = max(1, math.ceil(window / dt))
        dt = window / steps
        mp_win = mp_full.with_(T=steps * dt)
        ens = simulate_ensemble(mp_win, n_modes=N, dt=dt, seed=seed + j, replicas=replicas, threads=threads, record_times=[steps * dt])
        v = covariance_check(mp_full, x1, x2, ens.coeffs[-1])
        try:
            _, chat = lattice_point_constants(l, k, M)
            C_T = lsi_constant_C(schedule, T, float(chat.max())).C_display
        except ValueError:
            C_T = math.nan
        rows.append(
            FlowRow(
                T, mp_full.K, mp_full.gamma, mp_full.epsilon, mp_full.delta, mp_full.rho, M,
                v.info["cov"], v.stderr_lhs, v.rhs, C_T, v.verdict,
                {"x1": x1, "x2": x2, "n_modes": N, "dt": dt, "window": window, "corollary_bound": corollary_bound(T, l, k, schedule.kappa, schedule.n)},
            )
        )
    return rows
