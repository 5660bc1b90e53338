"""Resampling statistics from converged message states, and comparison of two
statistic sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from restab.denoise_x import x_moments
from restab.engine import lmmse_inverses
from restab.model import (
    Array,
    Dataset,
    DimensionGuard,
    MessageState,
    PenaltySpec,
    ResamplingStatistics,
    ShapeMismatch,
)

MAX_COVARIANCE_N = 4096
PI_EXCEED = 0.05


def stats_from_p1(state: MessageState, penalty: PenaltySpec) -> ResamplingStatistics:
    """Mean, variance and selection probability from the separable side-1 density."""
    xm = x_moments(state.r1x, state.Qh1x, state.chih1x, penalty)
    return ResamplingStatistics(
        mean=np.asarray(xm.mean, dtype=np.float64).copy(),
        variance=np.asarray(xm.var, dtype=np.float64).copy(),
        pi=np.asarray(xm.pi_active, dtype=np.float64).copy(),
        method="rvamp",
    )


def covariance_from_p2(state: MessageState, dataset: Dataset) -> Array:
    """Covariance of the Gaussian-stage estimate over its random fields.

    C = Lx^-1 [Diag(chih2x) + A^T Diag(chih2u / Q2u^2) A] Lx^-1.
    """
    if dataset.n > MAX_COVARIANCE_N:
        raise DimensionGuard(f"N={dataset.n} exceeds the dense covariance limit {MAX_COVARIANCE_N}")
    A = dataset.features
    pair = lmmse_inverses(A, state.Qh2x, state.Qh2u)
    X = pair.inv_lambda_x
    B = X @ A.T
    C = (X * state.chih2x[None, :]) @ X + (B * (state.chih2u / state.Qh2u**2)[None, :]) @ B.T
    return 0.5 * (C + C.T)


@dataclass
class StatDiff:
    max_abs: float
    rms: float
    pearson: float


@dataclass
class Comparison:
    mean: StatDiff
    variance: StatDiff
    pi: StatDiff
    pi_exceed_count: int
    pi_exceed_threshold: float = PI_EXCEED

    def to_dict(self) -> dict:
        return asdict(self)


def _pearson(a: Array, b: Array) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 1.0 if np.array_equal(a, b) else float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _diff(a: Array, b: Array) -> StatDiff:
    d = a - b
    return StatDiff(float(np.max(np.abs(d))), float(np.sqrt(np.mean(d * d))), _pearson(a, b))


def compare(a: ResamplingStatistics, b: ResamplingStatistics) -> Comparison:
    if a.n != b.n:
        raise ShapeMismatch(f"cannot compare statistics of length {a.n} and {b.n}")
    return Comparison(
        mean=_diff(a.mean, b.mean),
        variance=_diff(a.variance, b.variance),
        pi=_diff(a.pi, b.pi),
        pi_exceed_count=int(np.sum(np.abs(a.pi - b.pi) > PI_EXCEED)),
    )
