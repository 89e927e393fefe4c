"""
One-dimensional optimal transport on quantile functions
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import isotonic_regression

from wasscause.models import GridCurve, LevelGrid, QuantileCurve, StepCdf
from wasscause.utils.errors import DomainViolation, InsufficientData

logger = logging.getLogger(__name__)

Curve = Union[GridCurve, QuantileCurve]
Distribution = Union[StepCdf, QuantileCurve]


def sample_quantile(samples: Sequence[float], levels) -> np.ndarray:
    """Left-continuous inverse inf{z : F(z) >= u}, the ceil(k*u)-th order statistic"""
    ordered = np.sort(np.asarray(samples, dtype=float))
    k = ordered.size
    if k == 0:
        raise InsufficientData('empty sample set')
    cumulative = np.arange(1, k + 1) / k
    idx = np.searchsorted(cumulative, np.asarray(levels, dtype=float), side='left')
    return ordered[np.clip(idx, 0, k - 1)]


def empirical_quantile(samples: Sequence[float], grid: LevelGrid, bounds: Tuple[float, float]) -> QuantileCurve:
    """Empirical quantile curve of raw observations on the level grid"""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise InsufficientData('empty sample set')
    lo, hi = float(bounds[0]), float(bounds[1])
    outside = ~np.isfinite(samples) | (samples < lo) | (samples > hi)
    if np.any(outside):
        raise DomainViolation(
            f"{int(outside.sum())} sample(s) outside [{lo}, {hi}], first {samples[outside][0]!r}"
        )
    return QuantileCurve(grid, sample_quantile(samples, grid.levels), lo, hi)


def grid_norm(values, grid: LevelGrid) -> float:
    """Midpoint-rule L2 norm sqrt((1/M) sum v_j^2)"""
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.dot(values, values) / grid.M))


def w2_distance(a: Curve, b: Curve) -> float:
    a.grid.check_same(b.grid)
    return grid_norm(a.values - b.values, a.grid)


def curve_mean(curve: Curve) -> float:
    """Mean of the distribution under the midpoint rule"""
    return float(np.mean(curve.values))


def barycentre(curves: Sequence[QuantileCurve], weights: Optional[Sequence[float]] = None) -> QuantileCurve:
    """Wasserstein barycentre: the weighted mean of quantile values at every node"""
    curves = list(curves)
    if not curves:
        raise InsufficientData('barycentre of an empty set')
    grid = curves[0].grid
    for curve in curves[1:]:
        grid.check_same(curve.grid)

    if weights is None:
        weights = np.full(len(curves), 1.0 / len(curves))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(curves),):
        raise InsufficientData(f"expected {len(curves)} weights, got {weights.size}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DomainViolation('barycentre weights must be nonnegative and sum to 1')

    # Accumulate in input order so each node sees the same rounding sequence
    values = np.zeros(grid.M)
    for weight, curve in zip(weights, curves):
        values = values + weight * curve.values

    lo = min(curve.domain_lo for curve in curves)
    hi = max(curve.domain_hi for curve in curves)
    return QuantileCurve(grid, np.clip(values, lo, hi), lo, hi)


def quantile_at(curve: Curve, levels) -> np.ndarray:
    """Piecewise-linear interpolation in the level variable, clamped to the end values"""
    return np.interp(np.asarray(levels, dtype=float), curve.grid.levels, curve.values)


def cdf_eval(curve: Curve, t):
    """
    Right-continuous generalized inverse of the interpolated quantile curve,
    clamped to [u_1, u_M]. On flat stretches the largest level is returned.
    """
    values = curve.values
    levels = curve.grid.levels
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))

    j = np.searchsorted(values, t, side='right') - 1
    out = np.empty_like(t)
    below = j < 0
    above = j >= values.size - 1
    inner = ~(below | above)

    out[below] = levels[0]
    out[above] = levels[-1]
    if np.any(inner):
        ji = j[inner]
        # values[ji] <= t < values[ji + 1], so the step is positive
        step = values[ji + 1] - values[ji]
        out[inner] = levels[ji] + (t[inner] - values[ji]) / step * (levels[ji + 1] - levels[ji])
    return float(out[0]) if scalar else out


def _cdf(dist: Distribution, points: np.ndarray) -> np.ndarray:
    if isinstance(dist, StepCdf):
        return dist.cdf(points)
    return cdf_eval(dist, points)


def _quantile(dist: Distribution, levels: np.ndarray) -> np.ndarray:
    if isinstance(dist, StepCdf):
        return step_quantile(dist, levels)
    return quantile_at(dist, levels)


def step_quantile(dist: StepCdf, levels) -> np.ndarray:
    """Left-continuous inverse of a step CDF"""
    idx = np.searchsorted(dist.cumulative, np.asarray(levels, dtype=float), side='left')
    return dist.atoms[np.clip(idx, 0, dist.atoms.size - 1)]


def transport_map(src: Distribution, dst: Distribution, eval_points) -> np.ndarray:
    """Monotone map T(s) = dst quantile at the src CDF of s"""
    points = np.asarray(eval_points, dtype=float)
    lo, hi = src.bounds
    outside = (points < lo) | (points > hi) | ~np.isfinite(points)
    if np.any(outside):
        raise DomainViolation(f"evaluation point {points[outside].ravel()[0]!r} outside [{lo}, {hi}]")
    return _quantile(dst, _cdf(src, points))


def pushforward_compose(g: Curve, src_ref: QuantileCurve, dst_ref: QuantileCurve) -> GridCurve:
    """
    Re-express a level-coordinate curve referenced to src_ref against dst_ref:
    out_j = g(src_ref.cdf(dst_ref^{-1}(u_j)))
    """
    g.grid.check_same(src_ref.grid)
    g.grid.check_same(dst_ref.grid)
    levels = cdf_eval(src_ref, dst_ref.values)
    return GridCurve(g.grid, quantile_at(g, levels))


def isotonic_project(values) -> np.ndarray:
    """Least-squares nondecreasing projection (pool adjacent violators)"""
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.all(np.diff(values) >= 0):
        return values.copy()
    return np.asarray(isotonic_regression(values, increasing=True).x, dtype=float)


def project_curve(curve: Curve, bounds: Tuple[float, float]) -> QuantileCurve:
    """Isotonic projection clamped to bounds, so the result is a valid quantile curve"""
    lo, hi = float(bounds[0]), float(bounds[1])
    values = np.clip(isotonic_project(curve.values), lo, hi)
    return QuantileCurve(curve.grid, values, lo, hi)
