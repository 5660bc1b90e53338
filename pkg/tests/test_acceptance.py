"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The desk-scale DCT instance is N = 512, alpha = 0.15 (M = 77), rho = 0.05,
sigma = 0.1 with data seed 1.
"""

import time

import numpy as np
import pytest

import conftest
from oracles import x_moments_mc, x_moments_quadrature, u_moments_mc
from restab import engine
from restab.data import make_synthetic, preprocess
from restab.denoise_u import PoissonWeights, poisson_weights, u_moments
from restab.denoise_x import x_moments
from restab.model import BootstrapSpec, PenaltySpec, RvampConfig
from restab.oracle import (
    WeightedLassoProblem,
    cross_validate_lambda,
    lasso_cd,
    naive_stability,
)
from restab.statistics import compare, covariance_from_p2

DCT_SEED = 1
# frozen output of cross_validate_lambda on the DCT instance
DCT_LAMBDA = 0.2547949770764572


def record(num, title, ok, detail):
    conftest.CRITERIA.append((num, title, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
    return ok


@pytest.fixture(scope="module")
def dct():
    raw, _ = make_synthetic(512, 0.15, 0.05, 0.1, DCT_SEED)
    return preprocess(raw)


@pytest.fixture(scope="module")
def dct_lambda(dct):
    lam = cross_validate_lambda(dct)
    assert lam == pytest.approx(DCT_LAMBDA, rel=1e-9)
    return lam


@pytest.fixture(scope="module")
def dct_run(dct, dct_lambda):
    t0 = time.perf_counter()
    res = engine.run(dct, PenaltySpec(dct_lambda), BootstrapSpec(0.5))
    return res, time.perf_counter() - t0


def test_c1_degenerate_lasso(dct, dct_lambda):
    t0 = time.perf_counter()
    res = engine.run(dct, PenaltySpec.point_mass(dct_lambda), PoissonWeights.point_mass(1))
    elapsed = time.perf_counter() - t0
    x = lasso_cd(WeightedLassoProblem(dct, np.ones(dct.m), np.full(dct.n, dct_lambda)), tol=1e-14)
    err = float(np.max(np.abs(res.stats.mean - x)))
    ok = err <= 1e-6 and elapsed < 30
    record(1, "degenerate resampling equals LASSO", ok,
           f"max-abs {err:.2e} (<= 1e-6), {elapsed:.1f}s (< 30s), {len(res.trace)} iterations")
    assert ok


def test_c2_naive_oracle_agreement(dct, dct_lambda, dct_run):
    res, t_rvamp = dct_run
    t0 = time.perf_counter()
    naive = naive_stability(dct, PenaltySpec(dct_lambda), BootstrapSpec(0.5), 10_000, seed=0)
    elapsed = t_rvamp + time.perf_counter() - t0
    c = compare(res.stats, naive)
    ok = (c.pi.max_abs <= 0.05 and c.mean.pearson >= 0.99 and c.pi.pearson >= 0.99
          and c.variance.pearson >= 0.95 and elapsed < 900)
    record(2, "agreement with naive resampling (B=10000)", ok,
           f"max|dPi| {c.pi.max_abs:.4f} (<= 0.05), corr mean {c.mean.pearson:.4f}, "
           f"corr Pi {c.pi.pearson:.4f} (>= 0.99), corr var {c.variance.pearson:.4f} (>= 0.95), "
           f"{elapsed:.1f}s")
    assert ok


def test_c3_convergence_decay(dct_run):
    res, _ = dct_run
    d = res.trace.deltas
    t = res.trace.iterations.astype(float)
    sel = t >= 5
    slope, icept = np.polyfit(t[sel], np.log(d[sel]), 1)
    resid = np.log(d[sel]) - (slope * t[sel] + icept)
    r2 = 1 - np.sum(resid**2) / np.sum((np.log(d[sel]) - np.log(d[sel]).mean()) ** 2)
    ok = d[-1] <= 1e-12 and len(d) <= 50 and slope < 0 and r2 >= 0.95
    record(3, "exponential decay of delta", ok,
           f"{len(d)} iterations (<= 50) to delta {d[-1]:.1e}, slope {slope:.3f} (< 0), R^2 {r2:.3f} (>= 0.95)")
    assert ok


def test_c4_moment_matching(dct_run):
    st = dct_run[0].state
    gm = np.max(np.abs(st.xhat1 - st.xhat2) / (1 + np.abs(st.xhat1)))
    gv = np.max(np.abs(st.v1x - st.v2x) / (1 + st.v1x))
    ok = gm <= 1e-6 and gv <= 1e-6
    record(4, "fixed-point moment matching", ok, f"mean gap {gm:.1e}, variance gap {gv:.1e} (<= 1e-6)")
    assert ok


def test_c5_woodbury():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(32, 64)) / np.sqrt(32)
    q2x, q2u = rng.uniform(0.1, 5, 64), rng.uniform(0.1, 5, 32)
    t0 = time.perf_counter()
    pair = engine.lmmse_inverses(A, q2x, q2u)
    elapsed = time.perf_counter() - t0
    X, Y = engine.direct_inverses(A, q2x, q2u)
    err = max(np.max(np.abs(pair.inv_lambda_x - X)), np.max(np.abs(pair.inv_lambda_u - Y)))
    ok = pair.small_side == "m" and err <= 1e-10 and elapsed < 1
    record(5, "Woodbury inverse vs dense inverse", ok, f"max-abs {err:.1e} (<= 1e-10), {elapsed * 1e3:.1f} ms")
    assert ok


def test_c6_denoiser_oracles():
    rng = np.random.default_rng(2024)
    n = 1_000_000
    worst_x = worst_u = 0.0
    for _ in range(20):
        r, q = rng.uniform(-3, 3), np.exp(rng.uniform(-1, 1))
        chih, base = np.exp(rng.uniform(-3, 1)), np.exp(rng.uniform(-2, 0.5))
        pen = PenaltySpec(base)
        m = x_moments(r, q, chih, pen)
        est, se = x_moments_mc(r, q, chih, pen.atoms, base, n, rng)
        worst_x = max(worst_x, *(abs(a - b) / s for a, b, s in zip((m.mean, m.var, m.chi, m.pi_active), est, se)))
    w = poisson_weights(0.5, 1e-15)
    for _ in range(20):
        r, q = rng.uniform(-3, 3), np.exp(rng.uniform(-1, 1))
        chih, y = np.exp(rng.uniform(-3, 1)), rng.uniform(-2, 2)
        m = u_moments(r, q, chih, y, w)
        est, se = u_moments_mc(r, q, chih, y, w.counts, w.weights, n, rng)
        worst_u = max(worst_u, *(abs(a - b) / s for a, b, s in zip((m.mean, m.var, m.chi), est, se)))
    worst_q = 0.0
    for _ in range(200):
        r, q = rng.uniform(-10, 10), np.exp(rng.uniform(-2, 2))
        s, base = np.exp(rng.uniform(np.log(1e-3), np.log(10))), np.exp(rng.uniform(-3, 1))
        pen = PenaltySpec(base)
        m = x_moments(r, q, (s * q) ** 2, pen)
        ref = x_moments_quadrature(r, q, (s * q) ** 2, pen.atoms, base)
        worst_q = max(worst_q, *(abs(a - b) for a, b in zip((m.mean, m.var, m.chi, m.pi_active), ref)))
    ok = worst_x <= 4 and worst_u <= 4 and worst_q <= 1e-8
    record(6, "denoiser closed forms vs Monte Carlo and quadrature", ok,
           f"x worst {worst_x:.2f} SE, u worst {worst_u:.2f} SE (<= 4), quadrature {worst_q:.1e} (<= 1e-8)")
    assert ok


def test_c7_lasso_solver():
    rng = np.random.default_rng(7)
    worst_kkt, monotone = 0.0, True
    for k in range(50):
        m, n = int(rng.integers(10, 101)), int(rng.integers(10, 301))
        raw, _ = make_synthetic(n, m / n, 0.1, 0.1, 1000 + k, design="correlated", corr=0.2)
        ds = preprocess(raw)
        c = rng.poisson(1.0, m)
        if c.sum() == 0:
            c[0] = 1
        lmax = np.max(np.abs(ds.features.T @ (c * ds.outputs)))
        lam = lmax * rng.uniform(0.05, 0.5, n)
        prob = WeightedLassoProblem(ds, c, lam)
        x, hist = lasso_cd(prob, tol=1e-12, return_history=True)
        worst_kkt = max(worst_kkt, prob.kkt_residual(x))
        monotone &= bool(np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1])))
    ok = worst_kkt <= 1e-8 and monotone
    record(7, "coordinate-descent LASSO", ok,
           f"worst KKT residual {worst_kkt:.1e} (<= 1e-8), objective monotone: {monotone}")
    assert ok


def test_c8_exact_identities(dct, dct_run):
    st = dct_run[0].state
    xm = x_moments(st.r1x, st.Qh1x, st.chih1x, PenaltySpec(DCT_LAMBDA))
    e_pi = np.max(np.abs(dct_run[0].stats.pi - st.Qh1x * xm.chi))
    lm = engine.lmmse_moments(st, dct)
    inv_direct = np.linalg.inv(lm.pair.lambda_x)
    e_chi = np.max(np.abs(lm.chix - np.diag(inv_direct)))
    e_cov = np.max(np.abs(np.diag(covariance_from_p2(st, dct)) - lm.vx))
    ok = e_pi <= 1e-12 and e_chi <= 1e-8 and e_cov <= 1e-8
    record(8, "exact identities", ok,
           f"Pi - Q chi {e_pi:.1e} (<= 1e-12), chi2x - diag inv {e_chi:.1e}, v2x - diag C {e_cov:.1e} (<= 1e-8)")
    assert ok


def test_c9_correlated_design():
    raw, _ = make_synthetic(1024, 71 / 1024, 0.05, 0.1, 2, design="correlated", corr=0.3)
    ds = preprocess(raw)
    t0 = time.perf_counter()
    lam = cross_validate_lambda(ds)
    pen = PenaltySpec(lam)
    res = engine.run(ds, pen, BootstrapSpec(0.5), RvampConfig(damping=0.5, delta_tol=1e-10, max_iter=300))
    naive = naive_stability(ds, pen, BootstrapSpec(0.5), 1000, seed=0)
    elapsed = time.perf_counter() - t0
    c = compare(res.stats, naive)
    ok = len(res.trace) <= 300 and c.pi.pearson >= 0.95 and elapsed < 600
    record(9, "correlated design M=71, N=1024", ok,
           f"{len(res.trace)} iterations (<= 300) to delta {res.trace.deltas[-1]:.1e}, "
           f"corr Pi {c.pi.pearson:.4f} (>= 0.95), {elapsed:.1f}s")
    assert ok
