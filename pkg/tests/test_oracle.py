import numpy as np
import pytest

from restab import oracle
from restab.data import make_synthetic, preprocess
from restab.model import BootstrapSpec, Dataset, NotConverged, PenaltySpec, TooFewSamples
from restab.oracle import (
    WeightedLassoProblem,
    cross_validate_lambda,
    lasso_cd,
    naive_stability,
    sample_bootstrap,
    sample_penalty,
)


def _dataset(m, n, seed, rho=0.1):
    raw, _ = make_synthetic(n, m / n, rho, 0.1, seed, design="correlated", corr=0.2)
    return preprocess(raw)


def _penalty(ds, frac=0.1):
    return PenaltySpec(frac * oracle.lambda_max(ds))


def test_scalar_soft_threshold_case():
    a = np.array([[1 / np.sqrt(2)], [-1 / np.sqrt(2)]])
    y = np.array([np.sqrt(2), -np.sqrt(2)])  # a^T y = 2
    ds = Dataset(a, y, preprocessed=True)
    x = lasso_cd(WeightedLassoProblem(ds, np.ones(2), 0.5))
    assert x[0] == pytest.approx(1.5, abs=1e-12)


def test_null_solution_above_lambda_max():
    ds = _dataset(20, 30, 0)
    lmax = np.max(np.abs(ds.features.T @ ds.outputs))
    x = lasso_cd(WeightedLassoProblem(ds, np.ones(20), lmax * 1.0001))
    assert not x.any()


def test_kkt_on_random_instance():
    ds = _dataset(20, 50, 1)
    rng = np.random.default_rng(1)
    prob = WeightedLassoProblem(ds, rng.poisson(1.0, 20), rng.uniform(0.01, 0.2, 50))
    x = lasso_cd(prob, tol=1e-12)
    assert prob.kkt_residual(x) <= 1e-8


def test_objective_history_is_monotone():
    ds = _dataset(30, 60, 2)
    prob = WeightedLassoProblem(ds, np.ones(30), 0.01)
    x, hist = lasso_cd(prob, tol=1e-12, return_history=True)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
    assert hist[-1] == pytest.approx(prob.objective(x), rel=1e-10)


def test_not_converged():
    ds = _dataset(30, 60, 2)
    with pytest.raises(NotConverged):
        lasso_cd(WeightedLassoProblem(ds, np.ones(30), 1e-4), tol=1e-15, max_sweeps=2)


def test_problem_validation():
    ds = _dataset(10, 5, 0)
    with pytest.raises(ValueError):
        WeightedLassoProblem(ds, np.zeros(10), 0.1)
    with pytest.raises(ValueError):
        WeightedLassoProblem(ds, np.ones(10), 0.0)


def test_sample_bootstrap():
    spec = BootstrapSpec(tau=1.0, oracle_mode="multinomial")
    np.testing.assert_array_equal(sample_bootstrap(0, 1, spec), [1])
    c = sample_bootstrap(7, 100_000, BootstrapSpec(0.5))
    assert abs(c.mean() - 0.5) <= 4 * np.sqrt(0.5 / c.size)
    np.testing.assert_array_equal(sample_bootstrap(3, 50, BootstrapSpec()),
                                  sample_bootstrap(3, 50, BootstrapSpec()))
    mb = sample_bootstrap(1, 40, BootstrapSpec(0.5, oracle_mode="multinomial"))
    assert mb.sum() == 20


def test_sample_penalty():
    np.testing.assert_array_equal(sample_penalty(0, 4, PenaltySpec.point_mass(0.3)), np.full(4, 0.3))
    lam = sample_penalty(1, 100_000, PenaltySpec(1.0))
    frac = np.mean(lam == 2.0)
    assert set(np.unique(lam)) == {1.0, 2.0}
    assert abs(frac - 0.5) <= 4 * np.sqrt(0.25 / lam.size)
    np.testing.assert_array_equal(sample_penalty(5, 9, PenaltySpec(1.0)), sample_penalty(5, 9, PenaltySpec(1.0)))


def test_cv_on_pure_noise_prefers_heavy_shrinkage():
    rng = np.random.default_rng(0)
    raw = Dataset(rng.normal(size=(60, 40)), rng.normal(size=60))
    ds = preprocess(raw)
    lam, grid, err = cross_validate_lambda(ds, return_curve=True)
    assert lam >= grid[0] / 10
    # frozen from a direct run on this seeded instance
    assert lam == pytest.approx(1.818708116837139, rel=1e-9)  # lambda_max: index 0 of the grid


def test_cv_single_grid_point_and_determinism():
    ds = _dataset(40, 60, 3)
    assert cross_validate_lambda(ds, grid_size=1) == pytest.approx(oracle.lambda_max(ds))
    assert cross_validate_lambda(ds, seed=4) == cross_validate_lambda(ds, seed=4)


def test_cv_too_few_samples():
    ds = _dataset(8, 10, 0)
    with pytest.raises(TooFewSamples):
        cross_validate_lambda(ds, folds=10)


def test_single_degenerate_resample():
    ds = _dataset(30, 50, 4)
    s = naive_stability(ds, PenaltySpec.point_mass(0.05), BootstrapSpec(oracle_mode="none"), 1, 0)
    x = lasso_cd(WeightedLassoProblem(ds, np.ones(30), 0.05))
    np.testing.assert_allclose(s.mean, x, atol=1e-9)
    assert not s.variance.any()
    assert set(np.unique(s.pi)) <= {0.0, 1.0}


def test_standard_errors_scale_with_resample_count():
    ds = _dataset(30, 50, 5)
    pen = _penalty(ds)
    a = naive_stability(ds, pen, BootstrapSpec(), 2000, 0)
    b = naive_stability(ds, pen, BootstrapSpec(), 4000, 0)
    ok = (a.pi > 0.1) & (a.pi < 0.9)
    ratio = b.mc_std_err["pi"][ok] / a.mc_std_err["pi"][ok]
    assert np.median(ratio) == pytest.approx(1 / np.sqrt(2), abs=0.05)


def test_reproducible_across_thread_counts():
    ds = _dataset(30, 50, 6)
    pen = _penalty(ds)
    a = naive_stability(ds, pen, BootstrapSpec(), 300, 9, threads=1)
    b = naive_stability(ds, pen, BootstrapSpec(), 300, 9, threads=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.variance, b.variance)
    np.testing.assert_array_equal(a.pi, b.pi)


def test_multinomial_and_poisson_resampling_agree():
    ds = _dataset(64, 80, 7)
    pen = _penalty(ds)
    p = naive_stability(ds, pen, BootstrapSpec(0.5), 3000, 1)
    m = naive_stability(ds, pen, BootstrapSpec(0.5, oracle_mode="multinomial"), 3000, 2)
    joint = np.sqrt(p.mc_std_err["pi"] ** 2 + m.mc_std_err["pi"] ** 2)
    assert np.all(np.abs(p.pi - m.pi) <= 4 * np.maximum(joint, 1e-3))
