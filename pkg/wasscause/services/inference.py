"""
Uncertainty quantification for effect curves
"""

import logging
import math
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from wasscause.models import (
    Band, CovKernel, Decision, EffectEstimate, LevelGrid, NormTest, PointwiseInterval, ScalarInterval, Subject
)
from wasscause.services.effects import dr_terms, effect_w2_norm
from wasscause.services.nuisance import OutcomeFit, PropensityFit
from wasscause.utils.errors import InsufficientData, NumericalError, UsageError

logger = logging.getLogger(__name__)


def influence_curves(subjects: Sequence[Subject], outcome_fit: OutcomeFit,
                     propensity_fit: PropensityFit) -> np.ndarray:
    """Plug-in influence curves V_i (n, M); their mean is the DR effect curve"""
    phi1, phi0 = dr_terms(list(subjects), outcome_fit, propensity_fit)
    return phi1 - phi0


def covariance_kernel(curves: np.ndarray) -> CovKernel:
    """Sample covariance of the curves with divisor n"""
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2 or curves.shape[0] < 2:
        raise InsufficientData('covariance kernel needs at least two curves')
    centered = curves - curves.mean(axis=0)
    matrix = centered.T @ centered / curves.shape[0]
    return CovKernel(LevelGrid(curves.shape[1]), matrix)


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise UsageError(f"alpha must lie in (0, 1), got {alpha}")


def clipped_eigen(kernel: CovKernel) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the kernel matrix with negative eigenvalues clipped to zero"""
    matrix = np.asarray(kernel.matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise NumericalError('kernel has non-finite entries')
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    negative = eigenvalues.min(initial=0.0)
    if negative < 0:
        logger.debug(f"Clipped eigenvalues down to {negative:.3g}")
    return np.clip(eigenvalues, 0.0, None), eigenvectors


def gp_draws(kernel: CovKernel, B: int, seed: int) -> np.ndarray:
    """
    B draws (B, M) of the centred Gaussian process with the kernel's covariance,
    built from the clipped eigendecomposition. Draw b depends only on (seed, b).
    """
    if B < 1:
        raise UsageError(f"resample count must be positive, got {B}")
    eigenvalues, eigenvectors = clipped_eigen(kernel)
    scales = np.sqrt(eigenvalues)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    xi = rng.standard_normal((int(B), eigenvalues.size))
    return (xi * scales) @ eigenvectors.T


def gp_supnorm_samples(kernel: CovKernel, B: int, seed: int) -> np.ndarray:
    """sup_u |G(u)| over the grid nodes for B resampled processes"""
    return np.max(np.abs(gp_draws(kernel, B, seed)), axis=1)


def gp_l2norm_samples(kernel: CovKernel, B: int, seed: int) -> np.ndarray:
    draws = gp_draws(kernel, B, seed)
    return np.sqrt(np.sum(draws ** 2, axis=1) / kernel.grid.M)


def scb(estimate: EffectEstimate, kernel: CovKernel, alpha: float, B: int, seed: int) -> Band:
    """
    Simultaneous band effect +/- q/sqrt(n) with q the (1 - alpha) quantile of the sup-norms.
    The absolute value already makes sup|G| two-sided.
    """
    _check_alpha(alpha)
    estimate.grid.check_same(kernel.grid)
    samples = gp_supnorm_samples(kernel, B, seed)
    critical = float(np.quantile(samples, 1.0 - alpha, method='inverted_cdf'))
    return Band.from_center(estimate.effect, critical, estimate.n, alpha, B)


def test_null_zero_band(band: Band) -> Decision:
    """Reject the zero-effect null when the band excludes 0 at some node"""
    if np.any(band.lower > 0) or np.any(band.upper < 0):
        return Decision.REJECT
    return Decision.FAIL_TO_REJECT


# Not a pytest test despite the name
test_null_zero_band.__test__ = False


def band_covers(band: Band, truth) -> bool:
    truth = np.asarray(truth, dtype=float)
    return bool(np.all((band.lower <= truth) & (truth <= band.upper)))


def norm_test(estimate: EffectEstimate, kernel: CovKernel, B: int, alpha: float, seed: int) -> NormTest:
    """Test of W2(mu1, mu0) = 0 with statistic sqrt(n) * ||D||"""
    _check_alpha(alpha)
    estimate.grid.check_same(kernel.grid)
    statistic = math.sqrt(estimate.n) * effect_w2_norm(estimate)
    norms = gp_l2norm_samples(kernel, B, seed)
    critical = float(np.quantile(norms, 1.0 - alpha, method='inverted_cdf'))
    p_value = float(np.mean(norms >= statistic))
    decision = Decision.REJECT if statistic > critical else Decision.FAIL_TO_REJECT
    return NormTest(float(statistic), critical, p_value, decision, float(alpha), int(B))


def cf_median_covariance(rep_effects: Sequence[np.ndarray], rep_kernels: Sequence[CovKernel],
                         median_effect: np.ndarray) -> CovKernel:
    """
    Corrected kernels C^r + (D^r - D_med)(D^r - D_med)^T; the one with the lower-median
    operator norm is returned.
    """
    rep_effects, rep_kernels = list(rep_effects), list(rep_kernels)
    if not rep_kernels or len(rep_effects) != len(rep_kernels):
        raise InsufficientData('median covariance needs one kernel per repetition')
    median_effect = np.asarray(median_effect, dtype=float)
    corrected = []
    for effect, kernel in zip(rep_effects, rep_kernels):
        offset = np.asarray(effect, dtype=float) - median_effect
        corrected.append(CovKernel(kernel.grid, kernel.matrix + np.outer(offset, offset)))

    norms = np.array([kernel.operator_norm() for kernel in corrected])
    order = np.argsort(norms, kind='stable')
    chosen = int(order[math.ceil(len(corrected) / 2) - 1])
    logger.debug(f"Selected repetition {chosen} kernel (operator norm {norms[chosen]:.6g})")
    return corrected[chosen]


def estimate_kernel(estimate: EffectEstimate) -> CovKernel:
    """Covariance kernel matching the estimator: plain for dr/cf, median-selected for cfmed"""
    if estimate.repetitions:
        kernels = [covariance_kernel(rep.influence) for rep in estimate.repetitions]
        return cf_median_covariance([rep.effect for rep in estimate.repetitions], kernels, estimate.effect)
    if estimate.influence is None:
        raise UsageError(f"the {estimate.estimator} estimator has no influence curves; "
                         f"bands and tests need dr, cf or cfmed")
    return covariance_kernel(estimate.influence)


def treatment_interval(outcome_fit: OutcomeFit, alpha: float) -> PointwiseInterval:
    """Per-level t-interval for the treatment coefficient (not simultaneous)"""
    _check_alpha(alpha)
    if outcome_fit.xtx_inv is None or outcome_fit.sigma2 is None:
        raise UsageError('treatment interval needs an unpenalized joint outcome fit')
    center = outcome_fit.treatment_coef
    se = np.sqrt(outcome_fit.sigma2 * outcome_fit.xtx_inv[1, 1])
    half_width = stats.t.ppf(1.0 - alpha / 2.0, outcome_fit.dof) * se
    return PointwiseInterval(center, center - half_width, center + half_width, float(alpha))


def w2_interval(estimate: EffectEstimate, kernel: CovKernel, alpha: float) -> ScalarInterval:
    """Delta-method interval for W2(mu1, mu0) = ||D||"""
    _check_alpha(alpha)
    M = estimate.grid.M
    effect = estimate.effect
    w2 = effect_w2_norm(estimate)
    if w2 == 0:
        return ScalarInterval(0.0, 0.0, 0.0, float(alpha))
    variance = float(effect @ kernel.matrix @ effect) / M ** 2
    se = math.sqrt(max(variance, 0.0)) / w2 / math.sqrt(estimate.n)
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    return ScalarInterval(w2, max(w2 - z * se, 0.0), w2 + z * se, float(alpha))


def mean_shift_interval(estimate: EffectEstimate, kernel: CovKernel, alpha: float) -> ScalarInterval:
    """Wald interval for the difference of barycentre means"""
    _check_alpha(alpha)
    M = estimate.grid.M
    shift = float(np.mean(estimate.effect))
    variance = float(kernel.matrix.sum()) / M ** 2
    se = math.sqrt(max(variance, 0.0) / estimate.n)
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    return ScalarInterval(shift, shift - z * se, shift + z * se, float(alpha))
