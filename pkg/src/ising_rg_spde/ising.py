"""Exact references for the periodic 1D Ising chain and its discrete sign dynamics.

The Boltzmann weight is ``exp(K sum_i s_i s_{i+1} - (gamma/2) sum_i s_i^2)``; since
``s_i^2 = 1`` the ``gamma`` term is the constant ``exp(-gamma N / 2)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng as _rng


@dataclass(frozen=True)
class IsingChain:
    N: int
    K: float
    gamma: float = 0.0

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValueError("need N >= 2 sites")
        if not (math.isfinite(self.K) and math.isfinite(self.gamma)):
            raise ValueError("K and gamma must be finite")


def log2cosh(K):
    """``log(2 cosh K)`` without overflow."""
    a = np.abs(K)
    return a + np.log1p(np.exp(-2 * a))


def log_partition(chain: IsingChain) -> float:
    """``log Z`` with ``Z = e^{-gamma N/2} ((2 cosh K)^N + (2 sinh K)^N)``."""
    N, K = chain.N, chain.K
    t = math.tanh(K)
    return -chain.gamma * N / 2 + N * float(log2cosh(K)) + math.log1p(t**N)


def partition(chain: IsingChain) -> float:
    """Transfer-matrix partition function (may overflow to inf; see ``log_partition``)."""
    lz = log_partition(chain)
    return math.exp(lz) if lz < 709 else math.inf


def _states(N: int) -> np.ndarray:
    return np.array(list(itertools.product((1, -1), repeat=N)), dtype=float)


def enumerate_partition(chain: IsingChain) -> float:
    """Brute-force sum over all ``2^N`` configurations (N <= 20)."""
    if chain.N > 20:
        raise ValueError("enumeration limited to N <= 20")
    s = _states(chain.N)
    bond = np.sum(s * np.roll(s, -1, axis=1), axis=1)
    w = chain.K * bond - chain.gamma / 2 * np.sum(s * s, axis=1)
    m = w.max()
    return float(np.exp(m) * np.sum(np.exp(w - m)))


def two_point(chain: IsingChain, r: int) -> float:
    """``<s_0 s_r> = (t^r + t^(N-r)) / (1 + t^N)``, ``t = tanh K``."""
    if not 0 < r < chain.N:
        raise ValueError("separation must satisfy 0 < r < N")
    t = math.tanh(chain.K)
    return (t**r + t ** (chain.N - r)) / (1 + t**chain.N)


def enumerate_two_point(chain: IsingChain, r: int) -> float:
    s = _states(chain.N)
    bond = np.sum(s * np.roll(s, -1, axis=1), axis=1)
    w = chain.K * bond
    w = np.exp(w - w.max())
    return float(np.sum(w * s[:, 0] * s[:, r]) / np.sum(w))


def _atanh_cube(K: float) -> float:
    """``atanh(tanh(K)^3)`` accurate for large ``|K|``."""
    sgn = 1.0 if K >= 0 else -1.0
    a = abs(K)
    t = math.tanh(a)
    e = math.exp(-2 * a)
    one_minus_t = 2 * e / (1 + e)
    one_minus_y = one_minus_t * (1 + t + t * t)
    y = t**3
    if y < 0.5:
        return sgn * math.atanh(y)
    if one_minus_y == 0.0:
        return sgn * math.inf
    return sgn * 0.5 * (math.log1p(y) - math.log(one_minus_y))


def decimate(K: float) -> tuple[float, float]:
    """Sum out two of every three spins.

    Returns ``(K1, g)`` with ``tanh K1 = tanh^3 K`` and per-block constant
    ``g = log(4 cosh^3 K / cosh K1)``, so that
    ``Z_N(K, gamma) = exp((N/3) g) Z_{N/3}(K1, 3 gamma)``.
    """
    if not math.isfinite(K):
        raise ValueError("K must be finite")
    K1 = _atanh_cube(K)
    # log cosh x = log(2 cosh x) - log 2
    g = math.log(4.0) + 3 * (float(log2cosh(K)) - math.log(2.0)) - (float(log2cosh(K1)) - math.log(2.0))
    return K1, g


def matched_gamma(gamma: float) -> float:
    """Quadratic coefficient of the coarse chain: ``3 gamma`` (three sites per block)."""
    return 3.0 * gamma


def decimation_log_identity(chain: IsingChain) -> tuple[float, float]:
    """``(log Z_N(K, gamma), (N/3) g + log Z_{N/3}(K1, 3 gamma))``."""
    if chain.N % 3:
        raise ValueError("N must be a multiple of 3")
    K1, g = decimate(chain.K)
    coarse = IsingChain(chain.N // 3 if chain.N // 3 >= 2 else 2, K1, matched_gamma(chain.gamma))
    if chain.N // 3 < 2:
        raise ValueError("coarse chain needs at least 2 sites (N >= 6)")
    return log_partition(chain), chain.N / 3 * g + log_partition(coarse)


def local_field(phi, K: float, gamma: float):
    """``K (phi_{i-1} + phi_{i+1}) - (gamma - 1) phi_i`` on a periodic ring."""
    return K * (np.roll(phi, 1, axis=-1) + np.roll(phi, -1, axis=-1)) - (gamma - 1) * phi


def sign_dynamics(N: int, K: float, gamma: float, steps: int, seed: int, init=None, chains: int = 1, replica: int = 0):
    """Synchronous sign updates ``phi <- sgn(local_field(phi) + xi)`` with ``sgn(0) = +1``.

    Returns an int8 array of shape ``(steps + 1, N)`` for one chain, or
    ``(steps + 1, chains, N)`` otherwise.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if N < 2:
        raise ValueError("need N >= 2")
    g = _rng.replica_generator(seed, replica)
    phi = np.ones((chains, N)) if init is None else np.broadcast_to(np.asarray(init, dtype=float), (chains, N)).copy()
    out = np.empty((steps + 1, chains, N), dtype=np.int8)
    out[0] = phi
    for s in range(steps):
        xi = g.standard_normal((chains, N))
        phi = np.where(local_field(phi, K, gamma) + xi >= 0, 1.0, -1.0)
        out[s + 1] = phi
    return out[:, 0, :] if chains == 1 else out


def dynamics_transition_matrix(N: int, K: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``2^N x 2^N`` transition matrix of the sign dynamics and its state list."""
    if N > 12:
        raise ValueError("transition matrix limited to N <= 12")
    s = _states(N)
    h = local_field(s, K, gamma)  # (S, N)
    # P(phi'_i | phi) = Phi(phi'_i h_i)
    P = np.prod(ndtr(s[None, :, :] * h[:, None, :]), axis=2)
    return P, s


def dynamics_stationary_two_point(N: int, K: float, gamma: float, r: int) -> float:
    """``E[s_0 s_r]`` under the stationary law of the sign dynamics."""
    P, s = dynamics_transition_matrix(N, K, gamma)
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi = pi / pi.sum()
    return float(np.sum(pi * s[:, 0] * s[:, r]))


@dataclass
class EmpiricalCorrelation:
    r: int
    value: float
    stderr: float
    sweeps: int


def empirical_two_point(N: int, K: float, gamma: float, r: int, chains: int, sweeps: int, seed: int, burn: int = 100) -> EmpiricalCorrelation:
    """Time- and ring-averaged ``s_i s_{i+r}`` over independent chains.

    The standard error comes from the spread of the per-chain averages.
    """
    if chains < 2:
        raise ValueError("need at least two chains for an error estimate")
    g = _rng.replica_generator(seed, 0)
    phi = np.where(g.standard_normal((chains, N)) >= 0, 1.0, -1.0)
    acc = np.zeros(chains)
    for s in range(burn + sweeps):
        xi = g.standard_normal((chains, N))
        phi = np.where(local_field(phi, K, gamma) + xi >= 0, 1.0, -1.0)
        if s >= burn:
            acc += np.mean(phi * np.roll(phi, -r, axis=1), axis=1)
    per_chain = acc / sweeps
    return EmpiricalCorrelation(r, float(per_chain.mean()), float(per_chain.std(ddof=1) / math.sqrt(chains)), chains * sweeps)
