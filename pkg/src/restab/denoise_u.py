"""Likelihood-side denoiser for the squared loss under Poisson occupation numbers.

In the MAP limit the conjugate (Fourier) variable of a data point with
occupation c sits at the minimiser of

    q_hat/2 * (u - g)**2 + u*y + u**2 / (2c)

(u = 0 when c = 0). The minimiser is affine in the field g, so averages over
the Gaussian field and over c reduce to finite sums over the truncated
Poisson support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.stats import poisson

from restab.model import Array, NonPositivePrecision

Real = Union[float, Array]


@dataclass(frozen=True)
class PoissonWeights:
    """Truncated, renormalised occupation-number distribution."""

    tau: float
    counts: tuple[int, ...]
    weights: tuple[float, ...]

    @classmethod
    def point_mass(cls, c: int = 1) -> "PoissonWeights":
        """Degenerate distribution: every data point appears exactly c times."""
        return cls(tau=float(c), counts=(int(c),), weights=(1.0,))

    @property
    def c_max(self) -> int:
        return max(self.counts)

    def as_arrays(self) -> tuple[Array, Array]:
        return np.array(self.counts, dtype=np.float64), np.array(self.weights)


def poisson_cmax(tau: float, tail_tol: float) -> int:
    """Smallest c with P(C > c) < tail_tol for C ~ Poisson(tau)."""
    c = 0
    while poisson.sf(c, tau) >= tail_tol:
        c += 1
    return c


def poisson_weights(tau: float, tail_tol: float) -> PoissonWeights:
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not tail_tol > 0:
        raise ValueError("tail_tol must be positive")
    c_max = poisson_cmax(tau, tail_tol)
    cs = np.arange(c_max + 1)
    raw = poisson.pmf(cs, tau)
    w = raw / raw.sum()
    return PoissonWeights(tau=float(tau), counts=tuple(int(c) for c in cs),
                          weights=tuple(float(x) for x in w))


def u_site_minimizer(g: Real, y: Real, q_hat: float, c: int) -> Real:
    """Stationary point of the single-site objective for occupation c."""
    if not q_hat > 0:
        raise NonPositivePrecision("q_hat must be strictly positive")
    if c == 0:
        return np.zeros_like(np.asarray(g, dtype=np.float64)) if np.ndim(g) else 0.0
    return c * (q_hat * g - y) / (c * q_hat + 1.0)


@dataclass
class UMoments:
    mean: Real
    var: Real
    chi: Real
    slope_complement: Real  # 1 - q_hat * chi


def u_moments(r: Real, q_hat: Real, chi_hat: Real, y: Real, weights: PoissonWeights) -> UMoments:
    """Mean, variance over (c, xi) and susceptibility of the site minimiser.

    With slope k_c = c q / (c q + 1) the minimiser is k_c * (g - y/q), so
    mean = E[k] (r - y/q),  var = Var[k] (r - y/q)^2 + E[k^2] s^2.
    """
    r_arr, q_arr, c_arr, y_arr = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (r, q_hat, chi_hat, y)))
    if np.any(~(q_arr > 0)):
        raise NonPositivePrecision("q_hat must be strictly positive")
    cs, ws = weights.as_arrays()

    k1 = np.zeros_like(q_arr)
    k2 = np.zeros_like(q_arr)
    one_minus = np.zeros_like(q_arr)
    for c, w in zip(cs, ws):
        if w == 0.0:
            continue
        cq = c * q_arr
        k = cq / (cq + 1.0)
        k1 += w * k
        k2 += w * k * k
        one_minus += w / (cq + 1.0)

    center = r_arr - y_arr / q_arr
    s2 = np.maximum(c_arr, 0.0) / q_arr**2
    mean = k1 * center
    var = np.maximum(k2 - k1 * k1, 0.0) * center**2 + k2 * s2
    chi = k1 / q_arr
    if all(np.ndim(v) == 0 for v in (r, q_hat, chi_hat, y)):
        return UMoments(float(mean), float(var), float(chi), float(one_minus))
    return UMoments(mean, var, chi, one_minus)
