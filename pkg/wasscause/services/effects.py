"""
Causal effect maps: OR, IPW, DR, cross-fitting and median cross-fitting estimators
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold

from wasscause.models import (
    EffectEstimate, FoldPlan, GridCurve, IndividualTransport, LevelGrid, QuantileCurve, Subject
)
from wasscause.services.nuisance import (
    NuisanceConfig, Nuisances, OutcomeFit, PropensityFit, fit_nuisances, fit_outcome_model,
    fit_propensity_model, predict_outcome_many, predict_propensity, stack_subjects
)
from wasscause.services.transport import (
    barycentre, cdf_eval, curve_mean, grid_norm, project_curve, pushforward_compose, quantile_at
)
from wasscause.utils.errors import DomainViolation, FoldDegenerate, InsufficientData, NotFound, UsageError

logger = logging.getLogger(__name__)

ESTIMATORS = ('or', 'ipw', 'dr', 'cf', 'cfmed')
ESTIMATED_REFERENCES = ('bary0', 'bary1')


def subject_bounds(subjects: Sequence[Subject]) -> Tuple[float, float]:
    return (min(subject.lifted.domain_lo for subject in subjects),
            max(subject.lifted.domain_hi for subject in subjects))


def _build_estimate(grid: LevelGrid, mu1_values, mu0_values, bounds, reference: str, estimator: str,
                    n: int, influence: Optional[np.ndarray] = None,
                    repetitions: Tuple[EffectEstimate, ...] = ()) -> EffectEstimate:
    mu1_raw = GridCurve(grid, mu1_values)
    mu0_raw = GridCurve(grid, mu0_values)
    if influence is not None:
        influence = np.asarray(influence, dtype=float)
        influence.setflags(write=False)
    return EffectEstimate(
        grid=grid,
        mu1_raw=mu1_raw,
        mu0_raw=mu0_raw,
        mu1=project_curve(mu1_raw, bounds),
        mu0=project_curve(mu0_raw, bounds),
        reference=reference,
        estimator=estimator,
        n=int(n),
        influence=influence,
        repetitions=tuple(repetitions),
    )


def estimate_or(subjects: Sequence[Subject], outcome_fit: OutcomeFit, reference: str = 'uniform') -> EffectEstimate:
    """Outcome regression: mu_a = P_n m_a(X)"""
    subjects = list(subjects)
    X, _, _ = stack_subjects(subjects)
    mu1 = predict_outcome_many(outcome_fit, 1, X).mean(axis=0)
    mu0 = predict_outcome_many(outcome_fit, 0, X).mean(axis=0)
    return _build_estimate(outcome_fit.grid, mu1, mu0, subject_bounds(subjects), reference, 'or', len(subjects))


def estimate_ipw(subjects: Sequence[Subject], propensity_fit: PropensityFit,
                 reference: str = 'uniform') -> EffectEstimate:
    """Inverse probability weighting: mu_a = P_n I(A=a) Z / f(a|X)"""
    subjects = list(subjects)
    X, A, Z = stack_subjects(subjects)
    prob = predict_propensity(propensity_fit, X)
    mu1 = (A / prob)[:, None] * Z
    mu0 = ((1.0 - A) / (1.0 - prob))[:, None] * Z
    return _build_estimate(subjects[0].lifted.grid, mu1.mean(axis=0), mu0.mean(axis=0),
                           subject_bounds(subjects), reference, 'ipw', len(subjects))


def dr_terms(subjects: Sequence[Subject], outcome_fit: OutcomeFit,
             propensity_fit: PropensityFit) -> Tuple[np.ndarray, np.ndarray]:
    """Per-subject augmented terms m_a + I(A=a)(Z - m_a)/f(a|X), each of shape (n, M)"""
    X, A, Z = stack_subjects(subjects)
    prob = predict_propensity(propensity_fit, X)
    m1 = predict_outcome_many(outcome_fit, 1, X)
    m0 = predict_outcome_many(outcome_fit, 0, X)
    phi1 = m1 + (A / prob)[:, None] * (Z - m1)
    phi0 = m0 + ((1.0 - A) / (1.0 - prob))[:, None] * (Z - m0)
    return phi1, phi0


def estimate_dr(subjects: Sequence[Subject], outcome_fit: OutcomeFit, propensity_fit: PropensityFit,
                reference: str = 'uniform') -> EffectEstimate:
    """Doubly robust estimator; influence curves phi1 - phi0 are kept on the estimate"""
    subjects = list(subjects)
    phi1, phi0 = dr_terms(subjects, outcome_fit, propensity_fit)
    return _build_estimate(subjects[0].lifted.grid, phi1.mean(axis=0), phi0.mean(axis=0),
                           subject_bounds(subjects), reference, 'dr', len(subjects), influence=phi1 - phi0)


# Cross-fitting

def make_fold_plan(n: int, K: int, seed: int = 0) -> FoldPlan:
    """Shuffled K-fold partition of range(n); K == 1 trains and evaluates on everything"""
    if K < 1:
        raise UsageError(f"fold count must be positive, got {K}")
    if K > n:
        raise UsageError(f"cannot split {n} subjects into {K} folds")
    if K == 1:
        return FoldPlan(1, (np.arange(n),), int(seed))
    splitter = KFold(n_splits=K, shuffle=True, random_state=int(seed))
    folds = tuple(np.sort(test) for _, test in splitter.split(np.arange(n)))
    logger.debug(f"Fold plan seed={seed}: sizes {[fold.size for fold in folds]}")
    return FoldPlan(K, folds, int(seed))


def _arm_reference(subjects: Sequence[Subject], reference: str) -> QuantileCurve:
    arm = 1 if reference == 'bary1' else 0
    curves = [subject.lifted for subject in subjects if subject.treatment == arm]
    if not curves:
        raise FoldDegenerate(f"no subjects in arm {arm} to build the {reference} reference")
    return barycentre(curves)


def _compose_rows(rows: np.ndarray, grid: LevelGrid, src: QuantileCurve, dst: QuantileCurve) -> np.ndarray:
    levels = cdf_eval(src, dst.values)
    return np.vstack([np.interp(levels, grid.levels, row) for row in rows])


def estimate_cf(subjects: Sequence[Subject], K: int, nuisance_config: NuisanceConfig,
                reference: str = 'uniform', seed: int = 0, plan: Optional[FoldPlan] = None) -> EffectEstimate:
    """
    Cross-fitted DR estimator. Nuisances are fitted on the training complement of
    each fold and evaluated on the fold. With an estimated (barycentre) reference
    the fold curves are carried to the full-sample reference before averaging.
    """
    subjects = list(subjects)
    n = len(subjects)
    if plan is None:
        plan = make_fold_plan(n, K, seed)
    grid = subjects[0].lifted.grid
    treatments = np.array([subject.treatment for subject in subjects])
    estimated = reference in ESTIMATED_REFERENCES
    common = _arm_reference(subjects, reference) if estimated else None

    mu1 = np.zeros(grid.M)
    mu0 = np.zeros(grid.M)
    influence = np.empty((n, grid.M))
    for k, fold in enumerate(plan.folds):
        train_idx = plan.training(k)
        arms = set(treatments[train_idx].tolist())
        if arms != {0, 1}:
            raise FoldDegenerate(f"training data of fold {k} contains only arm {arms.pop() if arms else '-'}")
        train = [subjects[i] for i in train_idx]
        test = [subjects[i] for i in fold]

        nuisances = fit_nuisances(train, nuisance_config, seed)
        phi1, phi0 = dr_terms(test, nuisances.outcome, nuisances.propensity)
        fold_mu1, fold_mu0 = phi1.mean(axis=0), phi0.mean(axis=0)
        fold_influence = phi1 - phi0

        if estimated and plan.K > 1:
            local = _arm_reference(train, reference)
            fold_mu1 = pushforward_compose(GridCurve(grid, fold_mu1), local, common).values
            fold_mu0 = pushforward_compose(GridCurve(grid, fold_mu0), local, common).values
            fold_influence = _compose_rows(fold_influence, grid, local, common)

        weight = fold.size / n
        mu1 = mu1 + weight * fold_mu1
        mu0 = mu0 + weight * fold_mu0
        influence[fold] = fold_influence

    return _build_estimate(grid, mu1, mu0, subject_bounds(subjects), reference, 'cf', n, influence=influence)


def repetition_seeds(seed: int, R: int) -> List[int]:
    """Fold-plan seeds for R repetitions; the first repetition runs on seed itself"""
    children = np.random.SeedSequence(int(seed)).spawn(max(int(R) - 1, 0))
    return [int(seed)] + [int(child.generate_state(1)[0]) for child in children]


def aggregate_median(estimates: Sequence[EffectEstimate], estimator: str = 'cfmed') -> EffectEstimate:
    """
    Per-node lower median (rank ceil(R/2)) of the effect curves. The barycentre
    curves at each node are taken from the repetition holding that median, so the
    aggregated effect is exactly mu1 - mu0.
    """
    estimates = list(estimates)
    if not estimates:
        raise InsufficientData('median aggregation needs at least one estimate')
    grid = estimates[0].grid
    for estimate in estimates[1:]:
        grid.check_same(estimate.grid)

    R = len(estimates)
    effects = np.vstack([estimate.effect for estimate in estimates])
    order = np.argsort(effects, axis=0, kind='stable')
    chosen = order[math.ceil(R / 2) - 1]
    nodes = np.arange(grid.M)
    mu1 = np.vstack([estimate.mu1_raw.values for estimate in estimates])[chosen, nodes]
    mu0 = np.vstack([estimate.mu0_raw.values for estimate in estimates])[chosen, nodes]

    first = estimates[0]
    lo = min(estimate.mu0.domain_lo for estimate in estimates)
    hi = max(estimate.mu0.domain_hi for estimate in estimates)
    return _build_estimate(grid, mu1, mu0, (lo, hi), first.reference, estimator, first.n,
                           repetitions=tuple(estimates))


def estimate_cf_median(subjects: Sequence[Subject], K: int, R: int, nuisance_config: NuisanceConfig,
                       reference: str = 'uniform', seed: int = 0) -> EffectEstimate:
    """Median over R independent cross-fitting partitions"""
    if R < 1:
        raise UsageError(f"repetition count must be positive, got {R}")
    subjects = list(subjects)
    estimates = []
    for r, rep_seed in enumerate(repetition_seeds(seed, R)):
        estimates.append(estimate_cf(subjects, K, nuisance_config, reference, rep_seed))
        logger.debug(f"Cross-fitting repetition {r + 1}/{R} done")
    return aggregate_median(estimates)


def run_estimator(subjects: Sequence[Subject], estimator: str, nuisance_config: NuisanceConfig,
                  K: int = 5, R: int = 20, reference: str = 'uniform',
                  seed: int = 0) -> Tuple[EffectEstimate, Optional[Nuisances]]:
    """Dispatch by estimator tag; full-sample nuisances are returned when they were fitted"""
    subjects = list(subjects)
    if estimator == 'or':
        outcome = fit_outcome_model(subjects, nuisance_config, seed)
        return estimate_or(subjects, outcome, reference), Nuisances(outcome, None)
    if estimator == 'ipw':
        propensity = fit_propensity_model(subjects, nuisance_config, seed)
        return estimate_ipw(subjects, propensity, reference), Nuisances(None, propensity)
    if estimator == 'dr':
        nuisances = fit_nuisances(subjects, nuisance_config, seed)
        return estimate_dr(subjects, nuisances.outcome, nuisances.propensity, reference), nuisances
    if estimator == 'cf':
        return estimate_cf(subjects, K, nuisance_config, reference, seed), None
    if estimator == 'cfmed':
        return estimate_cf_median(subjects, K, R, nuisance_config, reference, seed), None
    raise UsageError(f"unknown estimator {estimator!r}; expected one of {', '.join(ESTIMATORS)}")


# Summaries and displays

def effect_w2_norm(estimate: EffectEstimate) -> float:
    """W2(mu1, mu0) as the grid norm of the effect curve"""
    return grid_norm(estimate.effect, estimate.grid)


def parse_reference(descriptor: str) -> Tuple[str, Optional[str]]:
    """Split 'uniform' | 'bary0' | 'bary1' | 'subject:ID' | 'file:PATH'"""
    descriptor = (descriptor or '').strip()
    kind, sep, arg = descriptor.partition(':')
    if kind in ('uniform', 'bary0', 'bary1') and not sep:
        return kind, None
    if kind in ('subject', 'file') and arg:
        return kind, arg
    raise UsageError(f"invalid reference {descriptor!r}; expected uniform, bary0, bary1, subject:ID or file:PATH")


def resolve_reference(descriptor: str, subjects: Sequence[Subject], estimate: Optional[EffectEstimate] = None,
                      external: Optional[QuantileCurve] = None,
                      grid: Optional[LevelGrid] = None) -> QuantileCurve:
    """Quantile curve of the reference distribution named by descriptor"""
    kind, arg = parse_reference(descriptor)
    subjects = list(subjects)
    if grid is None:
        grid = estimate.grid if estimate is not None else subjects[0].lifted.grid
    if kind == 'uniform':
        return QuantileCurve(grid, grid.levels, 0.0, 1.0)
    if kind in ESTIMATED_REFERENCES:
        if estimate is None:
            return _arm_reference(subjects, kind)
        return estimate.mu1 if kind == 'bary1' else estimate.mu0
    if kind == 'subject':
        for subject in subjects:
            if subject.id == arg:
                return subject.lifted
        raise NotFound(f"reference subject {arg} is not in the dataset")
    if external is None:
        raise UsageError(f"reference {descriptor!r} needs an external curve")
    grid.check_same(external.grid)
    return external


def render_effect_map(estimate: EffectEstimate, reference_curve: QuantileCurve) -> np.ndarray:
    """Rows (t_j, D(u_j)) with t_j the projected reference quantile at u_j"""
    estimate.grid.check_same(reference_curve.grid)
    reference = project_curve(reference_curve, reference_curve.bounds)
    return np.column_stack([reference.values, estimate.effect])


def _shift_curve(subject: Subject, estimate: EffectEstimate) -> Tuple[QuantileCurve, bool]:
    subject.lifted.grid.check_same(estimate.grid)
    sign = 1.0 if subject.treatment == 0 else -1.0
    shifted = subject.lifted.values + sign * estimate.effect
    lo, hi = subject.lifted.bounds
    clamped = bool(np.any(shifted < lo) or np.any(shifted > hi))
    return project_curve(GridCurve(estimate.grid, shifted), (lo, hi)), clamped


def counterfactual_subject(subject: Subject, estimate: EffectEstimate) -> QuantileCurve:
    """Observed curve moved to the other arm: controls get +D, treated subjects get -D"""
    curve, clamped = _shift_curve(subject, estimate)
    if clamped:
        logger.warning(f"Counterfactual curve of subject {subject.id} was clamped to its bounds")
    return curve


def individual_transport(subject: Subject, estimate: EffectEstimate) -> IndividualTransport:
    curve, clamped = _shift_curve(subject, estimate)
    if clamped:
        logger.warning(f"Counterfactual curve of subject {subject.id} was clamped to its bounds")
    return IndividualTransport(
        subject_id=subject.id,
        observed=subject.lifted,
        counterfactual=curve,
        mean_shift=curve_mean(curve) - curve_mean(subject.lifted),
        clamped=clamped,
    )


def population_transport_map(estimate: EffectEstimate, eval_points) -> np.ndarray:
    """
    Rows (s, T(s)) with T(s) = s + D(mu0(s)). This is the map between the two
    barycentres, not the average of the individual maps.
    """
    points = np.asarray(eval_points, dtype=float).ravel()
    support = estimate.mu0.values
    outside = (points < support[0]) | (points > support[-1]) | ~np.isfinite(points)
    if np.any(outside):
        raise DomainViolation(
            f"evaluation point {points[outside][0]!r} outside the control barycentre support "
            f"[{support[0]}, {support[-1]}]"
        )
    levels = cdf_eval(estimate.mu0, points)
    effect = GridCurve(estimate.grid, estimate.effect)
    return np.column_stack([points, points + quantile_at(effect, levels)])


def oracle_effect(potential1: Sequence[QuantileCurve], potential0: Sequence[QuantileCurve]) -> GridCurve:
    """Mean of individual differences Y_i(1)^{-1} - Y_i(0)^{-1}"""
    potential1, potential0 = list(potential1), list(potential0)
    if not potential1 or len(potential1) != len(potential0):
        raise InsufficientData('oracle effect needs paired potential curves')
    grid = potential1[0].grid
    differences = np.vstack([y1.values - y0.values for y1, y0 in zip(potential1, potential0)])
    return GridCurve(grid, differences.mean(axis=0))
