"""Replicated VAMP iteration.

Each iteration runs the separable denoisers on side 1 (x block and
conjugate u block), reflects the extrinsic messages to side 2, solves the
coupled Gaussian stage there and reflects back. Messages are parameterised
by a precision ``Qh``, a field strength ``chih`` (the Gaussian field added to
the mean has variance chih / Qh**2) and a mean ``r``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla

from restab.denoise_u import PoissonWeights, poisson_weights, u_moments
from restab.denoise_x import x_moments
from restab.model import (
    Array,
    BootstrapSpec,
    ConvergenceTrace,
    Dataset,
    MessageState,
    NotConverged,
    NumericalBreakdown,
    PenaltySpec,
    ResamplingStatistics,
    RvampConfig,
    SingularMatrix,
    validate_dataset,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Gaussian stage linear algebra
# ---------------------------------------------------------------------------


def _spd_inverse(mat: Array) -> Array:
    """Inverse of a symmetric positive-definite matrix via an equilibrated
    Cholesky factorisation."""
    d = np.diag(mat)
    if np.any(~(d > 0)) or not np.all(np.isfinite(d)):
        raise SingularMatrix("matrix has a non-positive diagonal")
    scale = 1.0 / np.sqrt(d)
    scaled = mat * scale[:, None] * scale[None, :]
    try:
        cf = sla.cho_factor(scaled, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    inv = sla.cho_solve(cf, np.eye(mat.shape[0]), check_finite=False)
    inv = 0.5 * (inv + inv.T)
    return inv * scale[:, None] * scale[None, :]


@dataclass
class LmmsePrecisionPair:
    """Inverses of the x- and u-block precisions of the Gaussian stage.

    ``inv_lambda_x`` inverts Diag(q2x) + A^T Diag(1/q2u) A and ``inv_lambda_u``
    inverts Diag(q2u) + A Diag(1/q2x) A^T. ``small_side`` is ``"m"`` when the
    M x M (Woodbury) route was used and ``"n"`` for the direct N x N route.
    """

    features: Array
    q2x: Array
    q2u: Array
    inv_lambda_x: Array
    inv_lambda_u: Array
    small_side: str
    n_weak: int = 0

    @property
    def lambda_x(self) -> Array:
        A = self.features
        return np.diag(self.q2x) + A.T @ (A / self.q2u[:, None])

    @property
    def lambda_u(self) -> Array:
        A = self.features
        return np.diag(self.q2u) + (A / self.q2x[None, :]) @ A.T


def lmmse_inverses(A: Array, q2x: Array, q2u: Array, route: str = "auto") -> LmmsePrecisionPair:
    """Compute both precision inverses at cost min(N, M)^3 + N^2 M.

    With M < N the M x M route is used. Coordinates whose prior precision is
    weaker than their data curvature are split off and handled through a
    Schur complement; the plain Woodbury expression would otherwise subtract
    two numbers of size 1/q2x and lose all accuracy as q2x -> 0.
    """
    M, N = A.shape
    w = 1.0 / q2u
    if route == "auto":
        route = "m" if M < N else "n"
    if route == "n":
        X = _spd_inverse(np.diag(q2x) + A.T @ (A * w[:, None]))
        AXAt = A @ X @ A.T
        Yu = np.diag(w) - w[:, None] * AXAt * w[None, :]
        return LmmsePrecisionPair(A, q2x, q2u, X, 0.5 * (Yu + Yu.T), "n", 0)
    if route != "m":
        raise ValueError(f"unknown route {route!r}")

    curvature = (A * A).T @ w
    weak = q2x < curvature
    S = np.flatnonzero(~weak)
    P = np.flatnonzero(weak)
    A_S, A_P = A[:, S], A[:, P]
    dinv_S = 1.0 / q2x[S]

    G = _spd_inverse(np.diag(q2u) + (A_S * dinv_S[None, :]) @ A_S.T)
    F = dinv_S[:, None] * (A_S.T @ G)  # |S| x M
    X = np.empty((N, N))
    X_SS = np.diag(dinv_S) - (F @ A_S) * dinv_S[None, :]
    if P.size:
        GA_P = G @ A_P
        Kinv = _spd_inverse(np.diag(q2x[P]) + A_P.T @ GA_P)
        FA_P = F @ A_P
        X_SP = -FA_P @ Kinv
        X_SS += FA_P @ Kinv @ FA_P.T
        Yu = G - GA_P @ Kinv @ GA_P.T
        X[np.ix_(P, P)] = Kinv
        X[np.ix_(S, P)] = X_SP
        X[np.ix_(P, S)] = X_SP.T
    else:
        Yu = G
    X[np.ix_(S, S)] = X_SS
    X = 0.5 * (X + X.T)
    return LmmsePrecisionPair(A, q2x, q2u, X, 0.5 * (Yu + Yu.T), "m", int(P.size))


def direct_inverses(A: Array, q2x: Array, q2u: Array) -> tuple[Array, Array]:
    """Plain dense inverses, used as an independent check."""
    lx = np.diag(q2x) + A.T @ np.diag(1.0 / q2u) @ A
    lu = np.diag(q2u) + A @ np.diag(1.0 / q2x) @ A.T
    return np.linalg.inv(lx), np.linalg.inv(lu)


# ---------------------------------------------------------------------------
# Message reflection
# ---------------------------------------------------------------------------


def _reflect(mean, var, chi, one_minus, q_in, chih_in, r_in, q_floor, q_ceil):
    """Extrinsic message from posterior moments and the incoming message.

    Q_out = 1/chi - Q_in, chih_out = var/chi^2 - chih_in and
    r_out = (mean/chi - Q_in r_in) / Q_out, written in terms of
    one_minus = 1 - Q_in chi so that chi -> 0 stays finite. Q_out is clipped
    to [q_floor, q_ceil]; r_out keeps Q_out * r_out exact under the floor and
    the field variance chih/Q^2 is preserved under the ceiling.
    """
    denom = np.maximum(one_minus, q_floor * chi)
    if np.any(~(denom > 0)):
        raise NumericalBreakdown("posterior has zero susceptibility and unit slope")
    with np.errstate(divide="ignore", over="ignore"):
        q_true = np.where(chi > 0, one_minus / np.where(chi > 0, chi, 1.0), np.inf)
    q_out = np.clip(q_true, q_floor, q_ceil)
    r_out = (mean - chi * (q_in * r_in)) / denom
    field_var = np.maximum(var - chih_in * chi * chi, 0.0) / (denom * denom)
    chih_out = field_var * q_out * q_out
    for a in (q_out, r_out, chih_out):
        if not np.all(np.isfinite(a)):
            raise NumericalBreakdown("non-finite message after reflection")
    return q_out, chih_out, r_out


def _damp(new: Array, old: Array, eta: float) -> Array:
    if eta >= 1.0:
        return new
    return eta * new + (1.0 - eta) * old


def _damp_message(new, old, eta: float, config: RvampConfig):
    """Damp a (Qh, chih, r) message in natural parameters.

    The precision and the linear term Qh * r are mixed, not r itself: near
    the floor r is huge while Qh * r stays moderate, and mixing r directly
    would blow the linear term up.
    """
    q_new, c_new, r_new = new
    q_old, c_old, r_old = old
    if eta >= 1.0:
        return q_new, c_new, r_new
    q = np.clip(_damp(q_new, q_old, eta), config.q_floor, config.q_ceil)
    h = _damp(q_new * r_new, q_old * r_old, eta)
    c = np.maximum(_damp(c_new, c_old, eta), 0.0)
    return q, c, h / q


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def init_state(dataset: Dataset, config: RvampConfig) -> MessageState:
    validate_dataset(dataset, require_preprocessed=True)
    st = MessageState.zeros(dataset.n, dataset.m)
    st.Qh1x[:] = 1.0
    st.Qh1u[:] = 1.0
    st.chih1x[:] = config.chi_hat_init
    st.chih1u[:] = config.chi_hat_init
    return st


def denoiser_stage(state: MessageState, dataset: Dataset, penalty: PenaltySpec,
                   weights: PoissonWeights, config: RvampConfig = RvampConfig(),
                   damp: bool = True) -> MessageState:
    """Side-1 moments and the reflected side-2 messages."""
    st = state.copy()
    xm = x_moments(st.r1x, st.Qh1x, st.chih1x, penalty)
    um = u_moments(st.r1u, st.Qh1u, st.chih1u, dataset.outputs, weights)
    st.xhat1, st.v1x, st.chi1x = xm.mean, xm.var, xm.chi
    st.uhat1, st.v1u, st.chi1u = um.mean, um.var, um.chi

    qx, cx, rx = _reflect(xm.mean, xm.var, xm.chi, xm.pi_inactive,
                          st.Qh1x, st.chih1x, st.r1x, config.q_floor, config.q_ceil)
    qu, cu, ru = _reflect(um.mean, um.var, um.chi, um.slope_complement,
                          st.Qh1u, st.chih1u, st.r1u, config.q_floor, config.q_ceil)
    eta = config.damping if damp else 1.0
    st.Qh2x, st.chih2x, st.r2x = _damp_message((qx, cx, rx), (state.Qh2x, state.chih2x, state.r2x),
                                               eta, config)
    st.Qh2u, st.chih2u, st.r2u = _damp_message((qu, cu, ru), (state.Qh2u, state.chih2u, state.r2u),
                                               eta, config)
    return st


@dataclass
class LmmseMoments:
    xhat: Array
    vx: Array
    chix: Array
    one_minus_x: Array
    uhat: Array
    vu: Array
    chiu: Array
    one_minus_u: Array
    pair: LmmsePrecisionPair
    B: Array  # inv_lambda_x @ A^T


def lmmse_moments(state: MessageState, dataset: Dataset, route: str = "auto") -> LmmseMoments:
    """Moments of the Gaussian stage for the current side-2 messages.

    The stationary point of the coupled quadratic is
        x2 = Lx^-1 (Q2x r2x - A^T r2u),   u2 = Lu^-1 (Q2u r2u + A r2x),
    and both are affine in the side-2 fields, so their per-coordinate
    variances follow from squared entries of the inverses.
    """
    A = dataset.features
    q2x, q2u = state.Qh2x, state.Qh2u
    pair = lmmse_inverses(A, q2x, q2u, route=route)
    X, Yu = pair.inv_lambda_x, pair.inv_lambda_u
    w = 1.0 / q2u
    B = X @ A.T

    h2x = q2x * state.r2x
    h2u = q2u * state.r2u
    # Lu^-1 A = Diag(w) A Lx^-1 Diag(q2x): keeps huge r2x (at floored Q2x) out of play
    xhat = X @ h2x - B @ state.r2u
    uhat = Yu @ h2u + w * (B.T @ h2x)

    chix = np.diag(X).copy()
    chiu = np.diag(Yu).copy()
    one_minus_x = np.einsum("im,m,mi->i", B, w, A)
    one_minus_u = w * np.einsum("mi,im->m", A, B)

    vx = (X * X) @ state.chih2x + (B * B) @ (state.chih2u * w * w)
    vu = (Yu * Yu) @ state.chih2u + w * w * ((B * B).T @ state.chih2x)
    return LmmseMoments(xhat, np.maximum(vx, 0.0), chix, one_minus_x,
                        uhat, np.maximum(vu, 0.0), chiu, one_minus_u, pair, B)


def lmmse_stage(state: MessageState, dataset: Dataset, config: RvampConfig = RvampConfig(),
                route: str = "auto") -> MessageState:
    """Side-2 moments and the reflected side-1 messages."""
    if min(state.Qh2x.min(), state.Qh2u.min()) < config.q_floor:
        raise NumericalBreakdown("side-2 precisions below q_floor")
    st = state.copy()
    lm = lmmse_moments(state, dataset, route=route)
    st.xhat2, st.v2x, st.chi2x = lm.xhat, lm.vx, lm.chix
    st.uhat2, st.v2u, st.chi2u = lm.uhat, lm.vu, lm.chiu

    qx, cx, rx = _reflect(lm.xhat, lm.vx, lm.chix, lm.one_minus_x,
                          st.Qh2x, st.chih2x, st.r2x, config.q_floor, config.q_ceil)
    qu, cu, ru = _reflect(lm.uhat, lm.vu, lm.chiu, lm.one_minus_u,
                          st.Qh2u, st.chih2u, st.r2u, config.q_floor, config.q_ceil)
    eta = config.damping
    st.Qh1x, st.chih1x, st.r1x = _damp_message((qx, cx, rx), (state.Qh1x, state.chih1x, state.r1x),
                                               eta, config)
    st.Qh1u, st.chih1u, st.r1u = _damp_message((qu, cu, ru), (state.Qh1u, state.chih1u, state.r1u),
                                               eta, config)
    return st


def delta(state: MessageState, n: Optional[int] = None) -> float:
    """max(||xhat1 - xhat2|| / sqrt(N), ||v1x - v2x|| / sqrt(N))."""
    n = state.n if n is None else n
    dm = np.linalg.norm(state.xhat1 - state.xhat2) / np.sqrt(n)
    dv = np.linalg.norm(state.v1x - state.v2x) / np.sqrt(n)
    return float(max(dm, dv))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def occupation_weights(bootstrap: Union[BootstrapSpec, PoissonWeights]) -> PoissonWeights:
    if isinstance(bootstrap, PoissonWeights):
        return bootstrap
    if bootstrap.oracle_mode == "none":
        return PoissonWeights.point_mass(1)
    return poisson_weights(bootstrap.tau, bootstrap.tail_tol)


@dataclass
class RvampResult:
    stats: ResamplingStatistics
    state: MessageState
    trace: ConvergenceTrace


def run(dataset: Dataset, penalty: PenaltySpec, bootstrap: Union[BootstrapSpec, PoissonWeights],
        config: RvampConfig = RvampConfig()) -> RvampResult:
    """Iterate to the fixed point and extract the resampling statistics.

    Raises NotConverged (with ``.result`` holding the last iterate) if
    ``delta`` stays above ``config.delta_tol`` for ``config.max_iter`` rounds.
    """
    from restab.statistics import stats_from_p1

    weights = occupation_weights(bootstrap)
    state = init_state(dataset, config)
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    converged = False
    for t in range(1, int(config.max_iter) + 1):
        state = denoiser_stage(state, dataset, penalty, weights, config, damp=t > 1)
        state = lmmse_stage(state, dataset, config)
        d = delta(state)
        trace.append(t, d, time.perf_counter() - t0)
        log.debug("iteration %d: delta=%.3e", t, d)
        if d <= config.delta_tol:
            converged = True
            break

    stats = stats_from_p1(state, penalty)
    stats.meta.update({
        "n": dataset.n, "m": dataset.m, "lambda": penalty.base,
        "atoms": [list(a) for a in penalty.atoms],
        "tau": weights.tau, "c_support": list(weights.counts),
        "delta_tol": config.delta_tol, "max_iter": int(config.max_iter),
        "damping": config.damping, "seed": int(config.seed),
        "iterations": len(trace), "final_delta": float(trace.deltas[-1]),
        "converged": converged,
    })
    result = RvampResult(stats, state, trace)
    if not converged:
        raise NotConverged(f"delta={trace.deltas[-1]:.3e} after {len(trace)} iterations",
                           trace=trace, state=state, result=result)
    return result
