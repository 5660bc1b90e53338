"""Brute-force resampling: draw (c, lambda), solve each weighted LASSO by
coordinate descent and aggregate the empirical statistics."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numba
import numpy as np

from restab.model import (
    Array,
    BootstrapSpec,
    Dataset,
    NotConverged,
    PenaltySpec,
    ResamplingStatistics,
    TooFewSamples,
    validate_dataset,
)

log = logging.getLogger(__name__)

ZERO_TOL = 1e-10
CHUNK = 64

Seed = Union[int, Sequence[int], np.random.SeedSequence]


# ---------------------------------------------------------------------------
# Weighted LASSO
# ---------------------------------------------------------------------------


@dataclass
class WeightedLassoProblem:
    """min_x 1/2 sum_mu c_mu (y_mu - a_mu^T x)^2 + sum_i lam_i |x_i|."""

    dataset: Dataset
    c: np.ndarray
    lam: Array

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c)
        self.lam = np.broadcast_to(np.asarray(self.lam, dtype=np.float64), (self.dataset.n,)).copy()
        if self.c.shape != (self.dataset.m,):
            raise ValueError(f"occupation vector must have length {self.dataset.m}")
        if np.any(self.c < 0) or self.c.sum() < 1:
            raise ValueError("occupation numbers must be nonnegative with at least one data point")
        if np.any(~(self.lam > 0)):
            raise ValueError("penalties must be strictly positive")

    def objective(self, x: Array) -> float:
        r = self.dataset.outputs - self.dataset.features @ x
        return float(0.5 * np.sum(self.c * r * r) + np.sum(self.lam * np.abs(x)))

    def kkt_residual(self, x: Array) -> float:
        """Largest violation of the subgradient optimality conditions."""
        A, y = self.dataset.features, self.dataset.outputs
        grad = -A.T @ (self.c * (y - A @ x))
        nz = x != 0
        viol = np.where(nz, np.abs(grad + self.lam * np.sign(x)),
                        np.maximum(np.abs(grad) - self.lam, 0.0))
        return float(viol.max())


@numba.njit(cache=True, nogil=True)
def _cd_kernel(At, y, w, lam, x, tol, max_sweeps, record):
    """Cyclic coordinate descent with active-set cycling.

    At is the (N, M') transposed design restricted to rows with w > 0.
    Returns (sweeps, converged, objective history).
    """
    n, m = At.shape
    resid = y.copy()
    for i in range(n):
        if x[i] != 0.0:
            for mu in range(m):
                resid[mu] -= At[i, mu] * x[i]
    z = np.zeros(n)
    for i in range(n):
        s = 0.0
        for mu in range(m):
            s += w[mu] * At[i, mu] * At[i, mu]
        z[i] = s
    history = np.empty(max_sweeps if record else 0)
    full = True
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        maxd = 0.0
        for i in range(n):
            if not full and x[i] == 0.0:
                continue
            if z[i] == 0.0:
                continue
            g = 0.0
            for mu in range(m):
                g += w[mu] * At[i, mu] * resid[mu]
            g += z[i] * x[i]
            if g > lam[i]:
                xn = (g - lam[i]) / z[i]
            elif g < -lam[i]:
                xn = (g + lam[i]) / z[i]
            else:
                xn = 0.0
            d = xn - x[i]
            if d != 0.0:
                for mu in range(m):
                    resid[mu] -= At[i, mu] * d
                x[i] = xn
                if abs(d) > maxd:
                    maxd = abs(d)
        if record:
            obj = 0.0
            for mu in range(m):
                obj += 0.5 * w[mu] * resid[mu] * resid[mu]
            for i in range(n):
                obj += lam[i] * abs(x[i])
            history[sweeps] = obj
        sweeps += 1
        if maxd <= tol:
            if full:
                converged = True
                break
            full = True
        else:
            full = False
    return sweeps, converged, history[:sweeps] if record else history


def _solve(At: Array, y: Array, w: Array, lam: Array, x0: Optional[Array],
           tol: float, max_sweeps: int, record: bool = False):
    keep = w > 0
    At_k = np.ascontiguousarray(At[:, keep])
    x = np.zeros(At.shape[0]) if x0 is None else np.array(x0, dtype=np.float64)
    sweeps, ok, hist = _cd_kernel(At_k, np.ascontiguousarray(y[keep]),
                                  np.ascontiguousarray(w[keep], dtype=np.float64),
                                  lam, x, tol, max_sweeps, record)
    return x, sweeps, ok, hist


def lasso_cd(problem: WeightedLassoProblem, tol: float = 1e-10, max_sweeps: int = 100_000,
             x0: Optional[Array] = None, return_history: bool = False):
    """Solve the weighted LASSO by coordinate descent.

    Stops once a full sweep changes no coordinate by more than ``tol``.
    With ``return_history`` also returns the objective after each sweep.
    """
    A = problem.dataset.features
    x, sweeps, ok, hist = _solve(np.ascontiguousarray(A.T), problem.dataset.outputs,
                                 problem.c.astype(np.float64), problem.lam, x0,
                                 tol, max_sweeps, record=return_history)
    if not ok:
        raise NotConverged(f"coordinate descent did not converge in {sweeps} sweeps")
    return (x, hist) if return_history else x


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _draw_occupation(rng: np.random.Generator, m: int, spec: BootstrapSpec) -> tuple[np.ndarray, int]:
    redraws = 0
    while True:
        if spec.oracle_mode == "none":
            c = np.ones(m, dtype=np.int64)
        elif spec.oracle_mode == "poisson":
            c = rng.poisson(spec.tau, size=m)
        else:
            mb = max(int(round(spec.tau * m)), 1)
            c = rng.multinomial(mb, np.full(m, 1.0 / m))
        if c.sum() >= 1:
            return c, redraws
        redraws += 1


def _draw_penalty(rng: np.random.Generator, n: int, penalty: PenaltySpec) -> Array:
    lams, ws = penalty.lambdas, penalty.weights
    if lams.size == 1:
        return np.full(n, lams[0])
    return lams[rng.choice(lams.size, size=n, p=ws)]


def sample_bootstrap(seed: Seed, m: int, spec: BootstrapSpec) -> np.ndarray:
    """Occupation vector of one bootstrap resample (empty resamples are redrawn)."""
    return _draw_occupation(np.random.default_rng(seed), m, spec)[0]


def sample_penalty(seed: Seed, n: int, penalty: PenaltySpec) -> Array:
    """Per-coordinate penalties drawn i.i.d. from the atom distribution."""
    return _draw_penalty(np.random.default_rng(seed), n, penalty)


# ---------------------------------------------------------------------------
# Cross validation
# ---------------------------------------------------------------------------


def lambda_max(dataset: Dataset) -> float:
    return float(np.max(np.abs(dataset.features.T @ dataset.outputs)))


def lambda_grid(dataset: Dataset, grid_size: int = 50) -> Array:
    """Log-spaced path from lambda_max down three decades."""
    lmax = lambda_max(dataset)
    if grid_size <= 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, -3.0, grid_size)


def cross_validate_lambda(dataset: Dataset, folds: int = 10, grid_size: int = 50, seed: int = 0,
                          tol: float = 1e-9, max_sweeps: int = 20_000, return_curve: bool = False):
    """K-fold CV of the plain LASSO over ``lambda_grid``; returns the grid
    value with least pooled held-out squared error."""
    validate_dataset(dataset, require_preprocessed=True)
    M = dataset.m
    if M < folds or folds < 2:
        raise TooFewSamples(f"{M} samples cannot form {folds} folds")
    grid = lambda_grid(dataset, grid_size)
    perm = np.random.default_rng(seed).permutation(M)
    At = np.ascontiguousarray(dataset.features.T)
    y = dataset.outputs
    sse = np.zeros(grid.size)
    # the path is cut at the first lambda where any fold fails to converge
    limit = grid.size
    for held in np.array_split(perm, folds):
        w = np.ones(M)
        w[held] = 0.0
        x = np.zeros(dataset.n)
        for k in range(limit):
            x, _, ok, _ = _solve(At, y, w, np.full(dataset.n, grid[k]), x, tol, max_sweeps)
            if not ok:
                limit = k
                break
            resid = y[held] - dataset.features[held] @ x
            sse[k] += float(resid @ resid)
    if limit == 0:
        raise NotConverged("coordinate descent failed at lambda_max inside cross validation")
    if limit < grid.size:
        log.warning("cross validation path truncated at lambda=%.4g", grid[limit - 1])
    grid = grid[:limit]
    err = sse[:limit] / M
    best = float(grid[int(np.argmin(err))])
    return (best, grid, err) if return_curve else best


# ---------------------------------------------------------------------------
# Naive resampling
# ---------------------------------------------------------------------------


def _n_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("RESTAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(int(threads), 1)


def naive_stability(dataset: Dataset, penalty: PenaltySpec, bootstrap: BootstrapSpec, B: int,
                    seed: int, threads: Optional[int] = None, tol: float = 1e-10,
                    max_sweeps: int = 100_000) -> ResamplingStatistics:
    """Empirical mean, variance and selection probability over B resamples.

    Resample b uses the generator seeded by (seed, b), and partial sums are
    accumulated in fixed chunks combined in index order, so the result does
    not depend on the number of worker threads.
    """
    validate_dataset(dataset, require_preprocessed=True)
    if B < 1:
        raise ValueError("B must be positive")
    N, M = dataset.n, dataset.m
    At = np.ascontiguousarray(dataset.features.T)
    y = dataset.outputs
    x_ref, _, ok, _ = _solve(At, y, np.ones(M), np.full(N, penalty.base), None, tol, max_sweeps)
    if not ok:
        raise NotConverged("reference LASSO did not converge")

    def work(lo: int, hi: int):
        sums = np.zeros((4, N))
        nonzero = np.zeros(N, dtype=np.int64)
        redraws = 0
        for b in range(lo, hi):
            rng = np.random.default_rng([int(seed), b])
            c, rd = _draw_occupation(rng, M, bootstrap)
            lam = _draw_penalty(rng, N, penalty)
            x, sweeps, ok, _ = _solve(At, y, c.astype(np.float64), lam, x_ref, tol, max_sweeps)
            if not ok:
                raise NotConverged(f"resample {b} did not converge in {sweeps} sweeps")
            d = x - x_ref
            d2 = d * d
            sums[0] += d
            sums[1] += d2
            sums[2] += d2 * d
            sums[3] += d2 * d2
            nonzero += np.abs(x) >= ZERO_TOL
            redraws += rd
        return sums, nonzero, redraws

    bounds = [(lo, min(lo + CHUNK, B)) for lo in range(0, B, CHUNK)]
    nt = _n_threads(threads)
    if nt == 1:
        parts = [work(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(lambda b: work(*b), bounds))

    sums = np.zeros((4, N))
    nonzero = np.zeros(N, dtype=np.int64)
    redraws = 0
    for s, nz, rd in parts:
        sums += s
        nonzero += nz
        redraws += rd

    m1 = sums[0] / B
    m2 = sums[1] / B
    m3 = sums[2] / B
    m4 = sums[3] / B
    mean = x_ref + m1
    central2 = np.maximum(m2 - m1 * m1, 0.0)
    variance = central2 * B / (B - 1) if B > 1 else np.zeros(N)
    central4 = np.maximum(m4 - 4 * m3 * m1 + 6 * m2 * m1**2 - 3 * m1**4, 0.0)
    pi = nonzero / B
    mc = {
        "mean": np.sqrt(variance / B),
        "variance": np.sqrt(np.maximum(central4 - central2**2, 0.0) / B),
        "pi": np.sqrt(pi * (1.0 - pi) / B),
    }
    meta = {
        "n": N, "m": M, "lambda": penalty.base, "atoms": [list(a) for a in penalty.atoms],
        "tau": bootstrap.tau, "mode": bootstrap.oracle_mode, "B": int(B), "seed": int(seed),
        "redraws": int(redraws), "zero_tol": ZERO_TOL,
    }
    return ResamplingStatistics(mean=mean, variance=variance, pi=pi, method="naive",
                                mc_std_err=mc, meta=meta)
