import numpy as np
import pytest
from scipy import stats

from wasscause.models import Band, CovKernel, Decision, LevelGrid
from wasscause.services import inference
from wasscause.services.effects import _build_estimate, estimate_cf_median, run_estimator
from wasscause.services.inference import (
    cf_median_covariance, clipped_eigen, covariance_kernel, estimate_kernel, gp_draws, gp_supnorm_samples,
    influence_curves, mean_shift_interval, norm_test, scb, treatment_interval, w2_interval
)
from wasscause.services.nuisance import FeatureMap, NuisanceConfig, OutcomeFit, PropensityFit, fit_outcome
from wasscause.utils.errors import InsufficientData, NumericalError, UsageError
from tests.helpers import make_subject


def estimate_with_effect(grid, effect, n=100):
    return _build_estimate(grid, np.asarray(effect, dtype=float), np.zeros(grid.M), (-10.0, 10.0),
                           'uniform', 'dr', n)


def rank_one_kernel(grid):
    g = np.sin(np.pi * grid.levels) + 0.5
    return CovKernel(grid, np.outer(g, g)), g


class TestInfluenceAndKernel:

    def test_influence_with_flat_nuisances(self, grid):
        rng = np.random.default_rng(2)
        subjects = [make_subject(f"s{i}", i % 2, [0.0], np.sort(rng.uniform(0, 1, grid.M)), grid)
                    for i in range(10)]
        outcome = OutcomeFit(FeatureMap('none'), grid, np.zeros((2, grid.M)))
        propensity = PropensityFit(FeatureMap('none'), np.zeros(1), epsilon=0.01)
        curves = influence_curves(subjects, outcome, propensity)
        for subject, row in zip(subjects, curves):
            sign = 1.0 if subject.treatment == 1 else -1.0
            np.testing.assert_allclose(row, sign * 2.0 * subject.lifted.values, atol=1e-15)

    def test_identical_curves_give_zero_kernel(self, grid):
        curves = np.tile(grid.levels, (5, 1))
        np.testing.assert_array_equal(covariance_kernel(curves).matrix, 0.0)

    def test_opposite_pair(self, grid):
        g = np.cos(np.pi * grid.levels)
        kernel = covariance_kernel(np.vstack([g, -g]))
        np.testing.assert_allclose(kernel.matrix, np.outer(g, g), atol=1e-15)

    def test_matches_double_loop(self):
        grid = LevelGrid(7)
        curves = np.random.default_rng(4).normal(size=(9, grid.M))
        n = curves.shape[0]
        mean = [sum(curves[i, s] for i in range(n)) / n for s in range(grid.M)]
        oracle = np.empty((grid.M, grid.M))
        for s in range(grid.M):
            for t in range(grid.M):
                oracle[s, t] = sum((curves[i, s] - mean[s]) * (curves[i, t] - mean[t]) for i in range(n)) / n
        np.testing.assert_allclose(covariance_kernel(curves).matrix, oracle, rtol=0, atol=1e-12)

    def test_needs_two_curves(self, grid):
        with pytest.raises(InsufficientData):
            covariance_kernel(grid.levels[None, :])

    def test_non_finite_kernel(self, grid):
        matrix = np.eye(grid.M)
        matrix[0, 0] = np.nan
        with pytest.raises(NumericalError):
            CovKernel(grid, matrix)


class TestResampling:

    def test_zero_kernel(self, grid):
        samples = gp_supnorm_samples(CovKernel(grid, np.zeros((grid.M, grid.M))), 50, seed=1)
        np.testing.assert_array_equal(samples, 0.0)

    def test_rank_one_kernel_is_half_normal(self, grid):
        kernel, g = rank_one_kernel(grid)
        samples = gp_supnorm_samples(kernel, 10_000, seed=3)
        result = stats.kstest(samples, stats.halfnorm(scale=np.max(np.abs(g))).cdf)
        assert result.pvalue > 0.01

    def test_draws_depend_only_on_seed_and_index(self, grid):
        kernel, _ = rank_one_kernel(grid)
        np.testing.assert_array_equal(gp_draws(kernel, 10, seed=5)[:4], gp_draws(kernel, 4, seed=5))

    def test_clipping_moves_the_kernel_by_at_most_the_negative_eigenvalue(self):
        grid = LevelGrid(4)
        basis, _ = np.linalg.qr(np.random.default_rng(7).normal(size=(4, 4)))
        matrix = (basis * [1.0, 0.5, 0.2, -5e-9]) @ basis.T
        kernel = CovKernel(grid, (matrix + matrix.T) / 2.0)
        smallest = np.linalg.eigvalsh(kernel.matrix)[0]
        eigenvalues, eigenvectors = clipped_eigen(kernel)
        rebuilt = (eigenvectors * eigenvalues) @ eigenvectors.T
        assert np.all(eigenvalues >= 0.0)
        assert np.linalg.norm(rebuilt - kernel.matrix, 2) <= abs(smallest) + 1e-12

    def test_resample_count(self, grid):
        kernel, _ = rank_one_kernel(grid)
        with pytest.raises(UsageError):
            gp_draws(kernel, 0, seed=1)


class TestBands:

    def test_zero_kernel_collapses_to_center(self, grid):
        estimate = estimate_with_effect(grid, np.full(grid.M, 0.3))
        band = scb(estimate, CovKernel(grid, np.zeros((grid.M, grid.M))), 0.05, 100, seed=0)
        np.testing.assert_array_equal(band.lower, band.center)
        np.testing.assert_array_equal(band.upper, band.center)

    def test_band_width_and_center(self, grid):
        estimate = estimate_with_effect(grid, np.sin(np.pi * grid.levels), n=64)
        kernel, _ = rank_one_kernel(grid)
        band = scb(estimate, kernel, 0.05, 500, seed=2)
        np.testing.assert_array_equal(band.center, estimate.effect)
        np.testing.assert_allclose(band.upper - band.center, band.critical / 8.0, rtol=1e-12)
        np.testing.assert_allclose(band.center - band.lower, band.critical / 8.0, rtol=1e-12)

    def test_alpha_half_uses_the_median(self, grid):
        estimate = estimate_with_effect(grid, np.zeros(grid.M))
        kernel, _ = rank_one_kernel(grid)
        band = scb(estimate, kernel, 0.5, 301, seed=4)
        median = np.quantile(gp_supnorm_samples(kernel, 301, seed=4), 0.5, method='inverted_cdf')
        assert band.critical == median

    def test_rank_one_critical_value(self, grid):
        kernel, g = rank_one_kernel(grid)
        band = scb(estimate_with_effect(grid, np.zeros(grid.M)), kernel, 0.05, 20_000, seed=9)
        assert band.critical == pytest.approx(np.max(np.abs(g)) * stats.norm.ppf(0.975), rel=0.03)

    def test_critical_value_shrinks_as_alpha_grows(self, grid):
        estimate = estimate_with_effect(grid, np.zeros(grid.M))
        kernel, _ = rank_one_kernel(grid)
        criticals = [scb(estimate, kernel, alpha, 400, seed=3).critical for alpha in (0.01, 0.05, 0.2, 0.5)]
        assert criticals == sorted(criticals, reverse=True)

    @pytest.mark.parametrize('alpha', [0.0, 1.0, -0.1])
    def test_invalid_alpha(self, grid, alpha):
        kernel, _ = rank_one_kernel(grid)
        with pytest.raises(UsageError):
            scb(estimate_with_effect(grid, np.zeros(grid.M)), kernel, alpha, 10, seed=0)

    def test_same_seed_same_band(self, grid):
        estimate = estimate_with_effect(grid, np.zeros(grid.M))
        kernel, _ = rank_one_kernel(grid)
        first = scb(estimate, kernel, 0.1, 200, seed=6)
        second = scb(estimate, kernel, 0.1, 200, seed=6)
        assert first.critical == second.critical

    def test_band_round_trips_through_dict(self, grid):
        band = Band.from_center(np.linspace(0, 1, grid.M), 1.5, 25, 0.05, 100)
        restored = Band.from_dict(band.to_dict())
        np.testing.assert_array_equal(restored.lower, band.lower)
        assert restored.critical == band.critical


class TestZeroBandTest:

    def test_band_above_zero_rejects(self):
        band = Band.from_center(np.full(5, 2.0), 1.0, 4, 0.05, 10)
        assert inference.test_null_zero_band(band) is Decision.REJECT

    def test_band_containing_zero_fails_to_reject(self):
        band = Band.from_center(np.full(5, 0.1), 1.0, 4, 0.05, 10)
        assert inference.test_null_zero_band(band) is Decision.FAIL_TO_REJECT


class TestNormTest:

    def test_zero_effect_zero_kernel(self, grid):
        estimate = estimate_with_effect(grid, np.zeros(grid.M))
        result = norm_test(estimate, CovKernel(grid, np.zeros((grid.M, grid.M))), 100, 0.05, seed=0)
        assert result.statistic == 0.0
        assert result.decision is Decision.FAIL_TO_REJECT

    def test_large_effect_rejects(self, grid):
        estimate = estimate_with_effect(grid, np.full(grid.M, 1.0), n=400)
        kernel, _ = rank_one_kernel(grid)
        result = norm_test(estimate, kernel, 500, 0.05, seed=1)
        assert result.decision is Decision.REJECT
        assert result.p_value == 0.0


    def test_rank_one_critical_value(self, grid):
        kernel, g = rank_one_kernel(grid)
        result = norm_test(estimate_with_effect(grid, np.zeros(grid.M)), kernel, 20_000, 0.05, seed=5)
        # ||G|| = |xi| * ||g|| under the midpoint rule
        g_norm = np.sqrt(np.sum(g ** 2) / grid.M)
        assert result.critical == pytest.approx(g_norm * stats.norm.ppf(0.975), rel=0.03)


class TestMedianCovariance:

    def test_single_repetition_without_offset(self, grid):
        kernel, _ = rank_one_kernel(grid)
        effect = np.zeros(grid.M)
        chosen = cf_median_covariance([effect], [kernel], effect)
        np.testing.assert_array_equal(chosen.matrix, kernel.matrix)

    def test_identical_repetitions(self, grid):
        kernel, _ = rank_one_kernel(grid)
        effect = np.ones(grid.M)
        chosen = cf_median_covariance([effect] * 3, [kernel] * 3, effect)
        np.testing.assert_array_equal(chosen.matrix, kernel.matrix)

    def test_median_operator_norm_is_selected(self):
        grid = LevelGrid(3)
        kernels = [CovKernel(grid, np.diag([3.0 * norm, 0.0, 0.0])) for norm in (100.0, 1.0, 5.0)]
        effect = np.zeros(3)
        chosen = cf_median_covariance([effect] * 3, kernels, effect)
        assert chosen.operator_norm() == pytest.approx(5.0)

    def test_kernel_for_median_estimate(self, dgp):
        estimate = estimate_cf_median(dgp.subjects, 3, 3, NuisanceConfig(), seed=2)
        kernel = estimate_kernel(estimate)
        assert kernel.matrix.shape == (estimate.grid.M, estimate.grid.M)

    def test_outcome_regression_has_no_kernel(self, dgp):
        estimate, _ = run_estimator(dgp.subjects, 'or', NuisanceConfig())
        with pytest.raises(UsageError):
            estimate_kernel(estimate)


class TestScalarIntervals:

    def test_zero_effect_w2_interval(self, grid):
        kernel, _ = rank_one_kernel(grid)
        interval = w2_interval(estimate_with_effect(grid, np.zeros(grid.M)), kernel, 0.05)
        assert (interval.estimate, interval.lower, interval.upper) == (0.0, 0.0, 0.0)

    def test_w2_interval_brackets_estimate(self, dgp):
        estimate, _ = run_estimator(dgp.subjects, 'dr', NuisanceConfig())
        interval = w2_interval(estimate, estimate_kernel(estimate), 0.05)
        assert 0.0 <= interval.lower < interval.estimate < interval.upper
        assert interval.estimate == pytest.approx(np.sqrt(1.0 / 128.0), abs=0.02)

    def test_mean_shift_interval(self, dgp):
        estimate, _ = run_estimator(dgp.subjects, 'dr', NuisanceConfig())
        interval = mean_shift_interval(estimate, estimate_kernel(estimate), 0.05)
        assert interval.estimate == pytest.approx(float(np.mean(estimate.effect)))
        assert interval.lower < interval.estimate < interval.upper

    def test_treatment_interval(self, dgp):
        fit = fit_outcome(dgp.subjects, FeatureMap('identity'))
        interval = treatment_interval(fit, 0.05)
        np.testing.assert_array_equal(interval.center, fit.treatment_coef)
        assert np.all(interval.lower <= interval.upper)
        assert interval.label == 'pointwise-per-level'

    def test_treatment_interval_needs_unpenalized_fit(self, dgp):
        fit = fit_outcome(dgp.subjects, FeatureMap('identity'), ridge=1.0)
        with pytest.raises(UsageError):
            treatment_interval(fit, 0.05)
