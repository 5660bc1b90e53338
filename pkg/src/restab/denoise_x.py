"""Prior-side denoiser for the l1 penalty in the MAP limit.

The site input is a Gaussian field h = r + s * xi with s = sqrt(chi_hat) / q_hat,
xi standard normal, and the penalty strength is drawn from a discrete
distribution. Every moment of the soft-thresholded field is available in
closed form through Gaussian tail probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from restab.model import Array, NonPositivePrecision, PenaltySpec

Real = Union[float, Array]

#: below this field scale the deterministic proximal map is used directly
S_DEGENERATE = 1e-14

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def soft_threshold(h: Real, theta: Real) -> Real:
    """sign(h) * max(|h| - theta, 0)."""
    h = np.asarray(h, dtype=np.float64)
    out = np.sign(h) * np.maximum(np.abs(h) - theta, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class XMoments:
    mean: Real
    var: Real
    chi: Real
    pi_active: Real
    pi_inactive: Real  # 1 - pi_active, evaluated without cancellation


def _npdf(z: Array) -> Array:
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _interval_prob(lo: Array, hi: Array) -> Array:
    """Phi(hi) - Phi(lo) for lo <= hi, accurate when both sit in one tail."""
    upper = ndtr(-lo) - ndtr(-hi)
    lower = ndtr(hi) - ndtr(lo)
    middle = 1.0 - ndtr(lo) - ndtr(-hi)
    return np.where(lo >= 0, upper, np.where(hi <= 0, lower, middle))


def _atom_moments(r: Array, s: Array, theta: Array):
    """First and second moment, active and inactive probability of
    soft_threshold(r + s*xi, theta) for a single penalty atom."""
    smooth = s >= S_DEGENERATE
    s_safe = np.where(smooth, s, 1.0)
    a = (theta - r) / s_safe
    b = (-theta - r) / s_safe
    p_up = ndtr(-a)
    p_lo = ndtr(b)
    pa, pb = _npdf(a), _npdf(b)
    mu_up = r - theta
    mu_lo = r + theta
    m1 = mu_up * p_up + s_safe * pa + mu_lo * p_lo - s_safe * pb
    m2 = (mu_up**2 * p_up + 2.0 * mu_up * s_safe * pa + s_safe**2 * (p_up + a * pa)
          + mu_lo**2 * p_lo - 2.0 * mu_lo * s_safe * pb + s_safe**2 * (p_lo - b * pb))
    p_in = _interval_prob(b, a)

    # s -> 0: deterministic proximal map
    st = np.sign(r) * np.maximum(np.abs(r) - theta, 0.0)
    active = (np.abs(r) > theta).astype(np.float64)
    m1 = np.where(smooth, m1, st)
    m2 = np.where(smooth, m2, st * st)
    p_act = np.where(smooth, p_up + p_lo, active)
    p_in = np.where(smooth, p_in, 1.0 - active)
    return m1, m2, p_act, p_in


def x_moments(r: Real, q_hat: Real, chi_hat: Real, penalty: PenaltySpec) -> XMoments:
    """Moments of the soft-thresholded Gaussian field, averaged over the penalty atoms.

    Works elementwise on arrays of equal shape (or scalars).
    """
    r_arr, q_arr, c_arr = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64)
                                                 for v in (r, q_hat, chi_hat)))
    if np.any(~(q_arr > 0)):
        raise NonPositivePrecision("q_hat must be strictly positive")
    s = np.sqrt(np.maximum(c_arr, 0.0)) / q_arr

    m1 = np.zeros_like(r_arr)
    m2 = np.zeros_like(r_arr)
    p_act = np.zeros_like(r_arr)
    p_in = np.zeros_like(r_arr)
    for (mult, w) in penalty.atoms:
        if w == 0.0:
            continue
        a1, a2, pa, pi_ = _atom_moments(r_arr, s, penalty.base * mult / q_arr)
        m1 += w * a1
        m2 += w * a2
        p_act += w * pa
        p_in += w * pi_

    var = np.maximum(m2 - m1 * m1, 0.0)
    p_act = np.clip(p_act, 0.0, 1.0)
    p_in = np.clip(p_in, 0.0, 1.0)
    chi = p_act / q_arr
    if np.ndim(r) == 0 and np.ndim(q_hat) == 0 and np.ndim(chi_hat) == 0:
        return XMoments(float(m1), float(var), float(chi), float(p_act), float(p_in))
    return XMoments(m1, var, chi, p_act, p_in)
