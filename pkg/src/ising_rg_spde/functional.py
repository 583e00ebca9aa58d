"""Ensemble estimators and inequality verdicts.

Every inequality check follows one rule: PASS iff
``lhs <= rhs + 3 sqrt(se_lhs^2 + se_rhs^2)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .kernel import KernelParams, covariance_K, gram, hs_norm_sq_Qpartial, trace_Q
from .solver import Ensemble, ModelParams, evaluate, norms_sq

PASS = "PASS"
FAIL = "FAIL"
VACUOUS = "VACUOUS"
UNMET = "HYPOTHESIS_UNMET"


@dataclass
class CylindricalObservable:
    """``F(X) = f(X(x_1), ..., X(x_n))`` with its gradient.

    ``f`` maps an array of shape ``(..., n)`` to ``(...)``; ``grad_f`` maps it to
    ``(..., n)``.
    """

    points: np.ndarray
    f: Callable
    grad_f: Callable
    name: str = "F"

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).ravel()
        if p.size < 1:
            raise ValueError("need at least one point")
        if np.any(p <= 0) or np.any(p >= 1):
            raise ValueError("points must lie strictly inside (0, 1)")
        if len(np.unique(p)) != p.size:
            raise ValueError("points must be distinct")
        self.points = p

    @property
    def n(self) -> int:
        return self.points.size

    def check_gradient(self, n_probes: int = 20, seed: int = 0, h: float = 1e-6, scale: float = 1.0) -> float:
        """Largest relative mismatch between ``grad_f`` and central differences."""
        rng = np.random.default_rng(seed)
        z = scale * rng.standard_normal((n_probes, self.n))
        g = np.asarray(self.grad_f(z), dtype=float)
        worst = 0.0
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            fd = (np.asarray(self.f(z + e)) - np.asarray(self.f(z - e))) / (2 * h)
            err = np.abs(fd - g[:, i]) / np.maximum(1.0, np.abs(g[:, i]))
            worst = max(worst, float(err.max()))
        return worst

    def values(self, coeffs) -> np.ndarray:
        """Point values ``X(x_i)`` for coefficient rows; shape ``(R, n)``."""
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        v = evaluate(c, self.points)  # (n, R)
        return np.asarray(v).reshape(self.n, -1).T


def linear_observable(points, weights=None, offset: float = 0.0) -> CylindricalObservable:
    """``F = offset + sum_i w_i X(x_i)``."""
    p = np.asarray(points, dtype=float).ravel()
    w = np.ones(p.size) if weights is None else np.asarray(weights, dtype=float)
    return CylindricalObservable(
        p,
        lambda z: offset + np.asarray(z) @ w,
        lambda z: np.broadcast_to(w, np.shape(z)).copy(),
        name="linear",
    )


def constant_observable(points, c: float = 1.0) -> CylindricalObservable:
    return CylindricalObservable(
        points,
        lambda z: np.full(np.shape(z)[:-1], c, dtype=float),
        lambda z: np.zeros(np.shape(z)),
        name="constant",
    )


@dataclass
class EstimateCI:
    value: float
    stderr: float
    replicas: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


@dataclass
class Verdict:
    check: str
    T: float
    lhs: float
    rhs: float
    stderr_lhs: float
    stderr_rhs: float
    margin: float
    verdict: str
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict in (PASS, VACUOUS, UNMET)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("info")
        return d


def judge(check: str, T: float, lhs: float, rhs: float, se_l: float, se_r: float, info=None) -> Verdict:
    slack = 3.0 * math.hypot(se_l, se_r)
    margin = rhs + slack - lhs
    return Verdict(check, T, lhs, rhs, se_l, se_r, margin, PASS if margin >= 0 else FAIL, info or {})


def mean_ci(x) -> EstimateCI:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    return EstimateCI(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), x.size)


def lsi_factor(mp: ModelParams) -> float:
    """``(exp(cT) - 1) / c`` with ``c = 1 - gamma - eps + 4K``."""
    c = mp.lsi_rate
    if c == 0:
        return mp.T
    return math.expm1(c * mp.T) / c


def entropy(F) -> EstimateCI:
    """Plug-in ``E[F^2 log F^2] - E[F^2] log E[F^2]`` with a delta-method error.

    Terms with ``F^2 < 1e-300`` contribute their limit value 0.
    """
    F = np.asarray(F, dtype=float).ravel()
    if not np.all(np.isfinite(F)):
        raise ValueError("samples must be finite")
    G = F * F
    if not np.any(G > 0):
        raise ValueError("entropy of an identically zero variable is undefined")
    tiny = G < 1e-300
    GlogG = np.where(tiny, 0.0, G * np.log(np.where(tiny, 1.0, G)))
    m2 = G.mean()
    val = GlogG.mean() - m2 * math.log(m2)
    infl = GlogG - (math.log(m2) + 1.0) * G
    se = float(infl.std(ddof=1) / math.sqrt(G.size)) if G.size > 1 else 0.0
    return EstimateCI(float(val), se, G.size)


def variance_ci(F) -> EstimateCI:
    F = np.asarray(F, dtype=float).ravel()
    d = F - F.mean()
    v = float(np.mean(d * d)) * F.size / (F.size - 1)
    se = float((d * d).std(ddof=1) / math.sqrt(F.size))
    return EstimateCI(v, se, F.size)


def gram_floor(points, kp: KernelParams, floor: str = "eigen") -> tuple[float, np.ndarray]:
    """Smallest-eigenvalue floor ``c^(rho)`` and the Gram matrix."""
    gm = gram(np.sort(points), kp)
    order = np.argsort(np.argsort(points))
    ent = gm.entries[np.ix_(order, order)]
    if floor == "eigen":
        return gm.lambda_min, ent
    if floor == "gersgorin":
        return gm.gersgorin_floor, ent
    raise ValueError(f"unknown floor {floor!r}")


def _energy(obs: CylindricalObservable, Z, Kmat) -> np.ndarray:
    g = np.asarray(obs.grad_f(Z), dtype=float)
    return np.einsum("ri,ij,rj->r", g, Kmat, g)


def _rhs_parts(mp: ModelParams, obs: CylindricalObservable, Z, floor: str):
    chat, Kmat = gram_floor(obs.points, mp.kernel_params, floor)
    en = mean_ci(_energy(obs, Z, Kmat))
    const = lsi_factor(mp) * obs.n**2 / chat if chat > 0 else math.nan
    return chat, const, en


def _coeffs(ensemble, mp: ModelParams):
    if isinstance(ensemble, Ensemble):
        return ensemble.at(mp.T)
    return np.asarray(ensemble, dtype=float)


def poincare_check(mp: ModelParams, obs: CylindricalObservable, ensemble, floor: str = "eigen") -> Verdict:
    """``Var F <= (e^{cT}-1)/c * n^2 / c^ * E[sum_ij K(x_i,x_j) d_i f d_j f]``."""
    Z = obs.values(_coeffs(ensemble, mp))
    chat, const, en = _rhs_parts(mp, obs, Z, floor)
    v = variance_ci(obs.f(Z))
    info = {"c_hat": chat, "floor": floor, "n": obs.n, "factor": lsi_factor(mp)}
    if not chat > 0:
        return Verdict("poincare", mp.T, v.value, math.inf, v.stderr, 0.0, math.inf, VACUOUS, info)
    return judge("poincare", mp.T, v.value, const * en.value, v.stderr, abs(const) * en.stderr, info)


def lsi_check(mp: ModelParams, obs: CylindricalObservable, ensemble, floor: str = "eigen") -> Verdict:
    """``Ent(F^2) <= 2 (e^{cT}-1)/c * n^2 / c^ * E[sum_ij K(x_i,x_j) d_i f d_j f]``."""
    Z = obs.values(_coeffs(ensemble, mp))
    chat, const, en = _rhs_parts(mp, obs, Z, floor)
    F = np.asarray(obs.f(Z), dtype=float)
    info = {"c_hat": chat, "floor": floor, "n": obs.n, "factor": lsi_factor(mp)}
    if not np.any(F != 0):
        return judge("lsi", mp.T, 0.0, 0.0, 0.0, 0.0, info)
    ent = entropy(F)
    if not chat > 0:
        return Verdict("lsi", mp.T, ent.value, math.inf, ent.stderr, 0.0, math.inf, VACUOUS, info)
    # Poincare right side doubled: halving it back is exact in floating point
    rhs_p = const * en.value
    return judge("lsi", mp.T, ent.value, 2.0 * rhs_p, ent.stderr, 2.0 * abs(const) * en.stderr, info)


def covariance_check(mp: ModelParams, x1: float, x2: float, ensemble, floor: str = "eigen") -> Verdict:
    """``|Cov(X(x1,T), X(x2,T))| <= |(e^{cT}-1)/c| sqrt(K11 K22 / (c1 c2))``.

    Each point enters through its own one-point Poincare inequality (n = 1), so
    ``c_i`` is the floor of the 1x1 Gram matrix at ``x_i``.
    """
    for x in (x1, x2):
        if not 0 < x < 1:
            raise ValueError("points must lie strictly inside (0, 1)")
    kp = mp.kernel_params
    c = _coeffs(ensemble, mp)
    X = np.asarray(evaluate(np.atleast_2d(c), np.array([x1, x2])))
    d1 = X[0] - X[0].mean()
    d2 = X[1] - X[1].mean()
    prod = d1 * d2
    R = prod.size
    cov = float(prod.sum() / (R - 1))
    se = float(prod.std(ddof=1) / math.sqrt(R))
    k11 = covariance_K(x1, x1, kp)
    k22 = covariance_K(x2, x2, kp)
    c1, _ = gram_floor([x1], kp, floor)
    c2, _ = gram_floor([x2], kp, floor)
    bound = abs(lsi_factor(mp)) * math.sqrt(k11 * k22 / (c1 * c2))
    info = {"cov": cov, "K11": k11, "K22": k22, "c1": c1, "c2": c2, "x1": x1, "x2": x2}
    return judge("covariance", mp.T, abs(cov), bound, se, 0.0, info)


def covariance_matrix(coeffs, points) -> np.ndarray:
    X = np.asarray(evaluate(np.atleast_2d(coeffs), np.asarray(points, dtype=float)))
    return np.atleast_2d(np.cov(X))


# moment bounds -------------------------------------------------------------


def C1(mp: ModelParams) -> float:
    return 2 * (1 - mp.gamma + 1 / mp.epsilon + 2 * mp.K)


def C2(mp: ModelParams) -> float:
    return 2 * (1 - mp.gamma - mp.epsilon + 2 * mp.K)


def l2_bound(mp: ModelParams, u_norm_sq: float, t: float) -> float:
    """``||u||^2 e^{C1 t} + Tr(Q) (e^{C1 t} - 1) / C1``."""
    c1 = C1(mp)
    return u_norm_sq * math.exp(c1 * t) + trace_Q(mp.kernel_params) * math.expm1(c1 * t) / c1


def grad_bound(mp: ModelParams, du_norm_sq: float, t: float) -> float:
    """``||du||^2 + ||Q_d^{1/2}||_HS^2 t``."""
    return du_norm_sq + hs_norm_sq_Qpartial(mp.kernel_params) * t


def R1(mp: ModelParams, du_norm_sq: float, t: float) -> float:
    """Fourth-moment bound ``||du||^4 + (8K + 6 HS)(||du||^2 t + HS t^2 / 2)``."""
    hs = hs_norm_sq_Qpartial(mp.kernel_params)
    return du_norm_sq**2 + (8 * mp.K + 6 * hs) * (du_norm_sq * t + hs * t * t / 2)


def moment_report(ensemble: Ensemble, mp: ModelParams, u0_coeffs) -> list[Verdict]:
    """Compare ensemble moments at every recorded time with the moment bounds.

    Rows whose hypotheses fail (``C1 <= 0`` for the L2 bound, ``C2 > 0`` for the
    gradient bounds) are reported as ``HYPOTHESIS_UNMET``.
    """
    u2, du2 = norms_sq(np.asarray(u0_coeffs, dtype=float))
    rows = []
    for t, c in zip(ensemble.times, ensemble.coeffs):
        x2, g2 = norms_sq(c)
        for name, samples, bound, ok in (
            ("l2_second_moment", x2, l2_bound(mp, u2, t) if C1(mp) > 0 else math.nan, C1(mp) > 0),
            ("grad_second_moment", g2, grad_bound(mp, du2, t), C2(mp) <= 0),
            ("grad_fourth_moment", g2**2, R1(mp, du2, t), C2(mp) <= 0),
        ):
            est = mean_ci(samples)
            if not ok:
                rows.append(Verdict(name, float(t), est.value, bound, est.stderr, 0.0, math.nan, UNMET))
            else:
                rows.append(judge(name, float(t), est.value, bound, est.stderr, 0.0))
    return rows


# partition function --------------------------------------------------------


@dataclass
class PartitionReport:
    T: float
    g: float
    g_stderr: float
    G: float
    Z: float
    jensen_floor: float
    floor_stderr: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def partition_function(mp: ModelParams, ensemble) -> PartitionReport:
    """``g(T) = E exp(-(K/2)||dX||^2 - ((gamma - 2K)/2)||X||^2)``, ``G = -log g``, ``Z = e^G g``.

    Checks ``exp(E[exponent]) - 3 se <= g <= 1``; the lower end is Jensen's
    inequality.
    """
    c = _coeffs(ensemble, mp)
    x2, g2 = norms_sq(np.atleast_2d(c))
    if x2.size < 2:
        raise ValueError("need at least two replicas")
    expo = -0.5 * mp.K * g2 - 0.5 * (mp.gamma - 2 * mp.K) * x2
    if not np.all(np.isfinite(expo)):
        raise ValueError("degenerate ensemble")
    w = np.exp(expo)
    est = mean_ci(w)
    if not est.value > 0:
        raise ValueError("degenerate ensemble: g(T) underflows to zero")
    e = mean_ci(expo)
    floor = math.exp(e.value)
    floor_se = floor * e.stderr
    G = -math.log(est.value)
    Z = math.exp(G + math.log(est.value))  # G + log g is exactly 0 in floating point
    ok = (est.value <= 1.0) and (est.value >= floor - 3 * math.hypot(floor_se, est.stderr))
    return PartitionReport(mp.T, est.value, est.stderr, G, Z, floor, floor_se, PASS if ok else FAIL)
