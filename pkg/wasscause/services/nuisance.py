"""
Nuisance models: propensity score and function-valued outcome regression
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.special import expit
from sklearn.model_selection import KFold

from wasscause.models import LevelGrid, Subject
from wasscause.utils.errors import InsufficientData, SeparationError, SingularDesign, UsageError

logger = logging.getLogger(__name__)

FEATURE_KINDS = ('identity', 'square', 'sine', 'bspline', 'none', 'custom')

RANK_TOLERANCE = 1e-10
SEPARATION_FIT_TOL = 1e-6


def stack_subjects(subjects: Sequence[Subject]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return covariates (n, d), treatments (n,) and lifted curve values (n, M)"""
    subjects = list(subjects)
    if not subjects:
        raise InsufficientData('no subjects')
    grid = subjects[0].lifted.grid
    for subject in subjects[1:]:
        grid.check_same(subject.lifted.grid)
    X = np.vstack([subject.covariates for subject in subjects]).astype(float)
    A = np.array([subject.treatment for subject in subjects], dtype=float)
    Z = np.vstack([subject.lifted.values for subject in subjects])
    return X, A, Z


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Covariate features phi(X); the intercept is added by the design builders.

    bspline features are cubic B-splines with interior knots at training
    covariate quantiles. Columns with too few distinct values for the knots
    (0/1 indicators) enter linearly.
    """
    kind: str = 'identity'
    n_knots: int = 10
    degree: int = 3
    knots: Optional[Tuple[Optional[np.ndarray], ...]] = None
    basis: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise UsageError(f"unknown feature map {self.kind!r}; expected one of {', '.join(FEATURE_KINDS)}")
        if self.kind == 'custom' and self.basis is None:
            raise UsageError('custom feature map needs a basis callable')

    @classmethod
    def parse(cls, spec: str, n_knots: int = 10, degree: int = 3) -> 'FeatureMap':
        """Parse 'identity' | 'square' | 'sine' | 'none' | 'bspline[:knots]'"""
        spec = (spec or '').strip().lower()
        if spec.startswith('bspline'):
            _, _, count = spec.partition(':')
            if count:
                if not count.isdigit() or int(count) < 1:
                    raise UsageError(f"invalid knot count in feature spec {spec!r}")
                n_knots = int(count)
            return cls('bspline', n_knots=n_knots, degree=degree)
        if spec == 'custom':
            raise UsageError('custom feature maps are built with FeatureMap.custom')
        return cls(spec)

    @classmethod
    def custom(cls, basis: Callable[[np.ndarray], np.ndarray]) -> 'FeatureMap':
        return cls('custom', basis=basis)

    @property
    def resolved(self) -> bool:
        return self.kind != 'bspline' or self.knots is not None

    def resolve(self, X: np.ndarray) -> 'FeatureMap':
        """Place spline knots from training covariates; other kinds are returned unchanged"""
        if self.resolved:
            return self
        X = np.atleast_2d(np.asarray(X, dtype=float))
        probs = np.arange(1, self.n_knots + 1) / (self.n_knots + 1)
        knots = []
        for column in X.T:
            lo, hi = float(column.min()), float(column.max())
            interior = np.unique(np.quantile(column, probs))
            interior = interior[(interior > lo) & (interior < hi)]
            if np.unique(column).size < self.n_knots + 2 or interior.size == 0:
                knots.append(None)
                continue
            knots.append(np.concatenate(([lo] * (self.degree + 1), interior, [hi] * (self.degree + 1))))
        logger.debug(f"Placed spline knots for {X.shape[1]} covariate(s)")
        return replace(self, knots=tuple(knots))

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Feature matrix (n, q) without the intercept column"""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        if self.kind == 'identity':
            return X
        if self.kind == 'square':
            return X ** 2
        if self.kind == 'sine':
            return np.sin(np.pi * X)
        if self.kind == 'none':
            return np.empty((n, 0))
        if self.kind == 'custom':
            return np.asarray(self.basis(X), dtype=float).reshape(n, -1)

        if not self.resolved:
            raise UsageError('spline features must be resolved on training data before use')
        if len(self.knots) != X.shape[1]:
            raise SingularDesign(f"spline features were built for {len(self.knots)} covariates, got {X.shape[1]}")
        blocks = []
        for column, knots in zip(X.T, self.knots):
            if knots is None:
                blocks.append(column.reshape(-1, 1))
                continue
            clipped = np.clip(column, knots[0], knots[-1])
            design = BSpline.design_matrix(clipped, knots, self.degree).toarray()
            # The basis sums to one, so the first column is collinear with the intercept
            blocks.append(design[:, 1:])
        return np.hstack(blocks)

    def describe(self) -> str:
        if self.kind == 'bspline':
            return f"bspline:{self.n_knots}"
        return self.kind


# Propensity score

@dataclass(frozen=True, eq=False)
class PropensityFit:
    feature_map: FeatureMap
    coef: np.ndarray
    epsilon: float
    ridge: float = 0.0
    iterations: int = 0

    def design(self, X: np.ndarray) -> np.ndarray:
        return _with_intercept(self.feature_map.transform(X))


def _with_intercept(features: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(features.shape[0]), features])


def _penalized_loglik(design, A, beta, penalty) -> float:
    eta = design @ beta
    return float(np.mean(A * eta - np.logaddexp(0.0, eta)) - 0.5 * np.dot(penalty * beta, beta))


def fit_propensity(subjects: Sequence[Subject], feature_map: FeatureMap, epsilon: float = 0.01,
                   ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-8,
                   separation_norm: float = 1e6) -> PropensityFit:
    """
    Logistic regression of treatment on (1, phi(X)) by damped Newton iterations on
    the mean log-likelihood. An optional ridge penalizes the non-intercept terms.
    """
    X, A, _ = stack_subjects(subjects)
    treated = int(A.sum())
    if treated == 0 or treated == A.size:
        raise SeparationError(f"treatment arm {'1' if treated == 0 else '0'} is empty")

    feature_map = feature_map.resolve(X)
    design = _with_intercept(feature_map.transform(X))
    n, p = design.shape
    if ridge == 0 and np.linalg.matrix_rank(design) < p:
        raise SingularDesign(f"propensity design of {p} columns is rank deficient")

    penalty = np.full(p, float(ridge))
    penalty[0] = 0.0
    beta = np.zeros(p)
    objective = _penalized_loglik(design, A, beta, penalty)
    iterations = 0
    converged = False

    for iterations in range(1, max_iter + 1):
        prob = expit(design @ beta)
        gradient = design.T @ (A - prob) / n - penalty * beta
        if np.max(np.abs(gradient)) <= tol:
            converged = True
            break
        weight = prob * (1.0 - prob)
        hessian = (design * weight[:, None]).T @ design / n + np.diag(penalty)
        try:
            step = linalg.solve(hessian, gradient, assume_a='pos')
        except (linalg.LinAlgError, ValueError) as e:
            raise SeparationError(f"Newton system became singular after {iterations} iterations: {e}")

        # Step halving until the penalized likelihood does not decrease
        scale = 1.0
        for _ in range(50):
            candidate = beta + scale * step
            candidate_objective = _penalized_loglik(design, A, candidate, penalty)
            if candidate_objective >= objective:
                break
            scale /= 2.0
        else:
            logger.debug(f"Step halving exhausted at iteration {iterations}")
            break
        beta, objective = candidate, candidate_objective

        if np.linalg.norm(beta) > separation_norm:
            raise SeparationError(f"logistic coefficients diverge (norm {np.linalg.norm(beta):.3g})")

    # Newton stalls on separated data long before the norm check fires
    if ridge == 0 and np.max(np.abs(A - expit(design @ beta))) < SEPARATION_FIT_TOL:
        raise SeparationError(f"treatment is perfectly predicted (coefficient norm {np.linalg.norm(beta):.3g})")

    if converged:
        logger.debug(f"Propensity fit converged in {iterations} iterations")
    else:
        logger.warning(f"Propensity fit stopped after {iterations} iterations without reaching tolerance {tol}")
    return PropensityFit(feature_map, beta, float(epsilon), float(ridge), iterations)


def predict_propensity(fit: PropensityFit, x: np.ndarray) -> Union[float, np.ndarray]:
    """P(A=1 | x) clipped to [epsilon, 1 - epsilon]; a 1-d x is one covariate vector"""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    prob = np.clip(expit(fit.design(X) @ fit.coef), fit.epsilon, 1.0 - fit.epsilon)
    return float(prob[0]) if single else prob


def select_propensity_ridge_cv(subjects: Sequence[Subject], feature_map: FeatureMap, folds: int = 5,
                               candidates: Sequence[float] = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0),
                               epsilon: float = 0.01, seed: int = 0) -> float:
    """Ridge with the smallest held-out Bernoulli deviance; ties go to the larger penalty"""
    subjects = list(subjects)
    candidates = _check_candidates(candidates, folds)
    if len(candidates) == 1:
        return candidates[0]
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    A = np.array([subject.treatment for subject in subjects], dtype=float)

    scores = {}
    for ridge in candidates:
        losses = []
        for train_idx, test_idx in splitter.split(A):
            try:
                fit = fit_propensity([subjects[i] for i in train_idx], feature_map, epsilon, ridge)
            except (SeparationError, SingularDesign) as e:
                logger.debug(f"Propensity ridge {ridge} failed on a fold: {e}")
                losses = None
                break
            X_test = np.vstack([subjects[i].covariates for i in test_idx])
            prob = predict_propensity(fit, X_test)
            a = A[test_idx]
            losses.append(-2.0 * np.mean(a * np.log(prob) + (1 - a) * np.log(1 - prob)))
        scores[ridge] = np.inf if losses is None else float(np.mean(losses))

    return _pick_penalty(scores, 'propensity')


# Outcome regression

@dataclass(frozen=True, eq=False)
class OutcomeFit:
    """
    Per-level coefficient table. Joint fits regress on (1, A, phi(X)) with coef of
    shape (p, M); per-arm fits keep one (1 + q, M) table per arm.
    """
    feature_map: FeatureMap
    grid: LevelGrid
    coef: Optional[np.ndarray]
    ridge: float = 0.0
    per_arm: bool = False
    arm_coef: Tuple[np.ndarray, ...] = ()
    xtx_inv: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    dof: int = 0

    @property
    def treatment_coef(self) -> np.ndarray:
        """Coefficient curve of the treatment indicator (joint fits)"""
        if self.per_arm:
            raise UsageError('per-arm outcome fits have no treatment coefficient')
        return self.coef[1]


def _solve_least_squares(design: np.ndarray, Z: np.ndarray, penalty: np.ndarray):
    """
    Penalized least squares for all levels from one QR factorization of the
    design augmented with sqrt(penalty) rows.
    """
    n, p = design.shape
    rows = np.diag(np.sqrt(penalty))[penalty > 0]
    augmented = np.vstack([design, rows])
    if augmented.shape[0] < p:
        raise SingularDesign(f"{n} subjects cannot identify {p} coefficients")
    target = np.vstack([Z, np.zeros((rows.shape[0], Z.shape[1]))])
    Q, R = linalg.qr(augmented, mode='economic')
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= RANK_TOLERANCE * diag.max():
        raise SingularDesign(f"outcome design of {p} columns is rank deficient")
    coef = linalg.solve_triangular(R, Q.T @ target)
    return coef, R


def fit_outcome(subjects: Sequence[Subject], feature_map: FeatureMap, ridge: float = 0.0,
                per_arm: bool = False) -> OutcomeFit:
    """Least squares of the lifted curves on (1, A, phi(X)) at every grid level"""
    subjects = list(subjects)
    X, A, Z = stack_subjects(subjects)
    grid = subjects[0].lifted.grid
    feature_map = feature_map.resolve(X)
    features = feature_map.transform(X)

    if per_arm:
        coefs = []
        for arm in (0, 1):
            mask = A == arm
            if not mask.any():
                raise SingularDesign(f"treatment arm {arm} has no subjects")
            design = _with_intercept(features[mask])
            penalty = np.full(design.shape[1], float(ridge))
            penalty[0] = 0.0
            coef, _ = _solve_least_squares(design, Z[mask], penalty)
            coefs.append(coef)
        return OutcomeFit(feature_map, grid, None, float(ridge), True, tuple(coefs))

    design = np.column_stack([np.ones(A.size), A, features])
    penalty = np.full(design.shape[1], float(ridge))
    penalty[:2] = 0.0
    coef, R = _solve_least_squares(design, Z, penalty)

    xtx_inv, sigma2 = None, None
    dof = A.size - design.shape[1]
    if ridge == 0 and dof > 0:
        r_inv = linalg.solve_triangular(R, np.eye(R.shape[0]))
        xtx_inv = r_inv @ r_inv.T
        residuals = Z - design @ coef
        sigma2 = np.sum(residuals ** 2, axis=0) / dof
    return OutcomeFit(feature_map, grid, coef, float(ridge), False, (), xtx_inv, sigma2, dof)


def predict_outcome_many(fit: OutcomeFit, a: int, X: np.ndarray) -> np.ndarray:
    """Predicted curves (n, M) for every row of X under treatment a"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    features = fit.feature_map.transform(X)
    if fit.per_arm:
        return _with_intercept(features) @ fit.arm_coef[int(a)]
    design = np.column_stack([np.ones(X.shape[0]), np.full(X.shape[0], float(a)), features])
    return design @ fit.coef


def predict_outcome(fit: OutcomeFit, a: int, x: np.ndarray) -> np.ndarray:
    """Predicted M-curve for one covariate vector"""
    return predict_outcome_many(fit, a, np.asarray(x, dtype=float).reshape(1, -1))[0]


def select_ridge_cv(subjects: Sequence[Subject], feature_map: FeatureMap, folds: int = 5,
                    candidates: Sequence[float] = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0),
                    seed: int = 0, per_arm: bool = False) -> float:
    """Ridge minimizing fold-averaged integrated squared prediction error; ties go to the larger penalty"""
    subjects = list(subjects)
    candidates = _check_candidates(candidates, folds)
    if len(candidates) == 1:
        return candidates[0]
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    X, A, Z = stack_subjects(subjects)

    scores = {}
    for ridge in candidates:
        losses = []
        for train_idx, test_idx in splitter.split(Z):
            try:
                fit = fit_outcome([subjects[i] for i in train_idx], feature_map, ridge, per_arm)
            except SingularDesign as e:
                logger.debug(f"Outcome ridge {ridge} failed on a fold: {e}")
                losses = None
                break
            predicted = np.vstack([
                predict_outcome(fit, int(A[i]), X[i]) for i in test_idx
            ])
            losses.append(np.mean((Z[test_idx] - predicted) ** 2))
        scores[ridge] = np.inf if losses is None else float(np.mean(losses))

    return _pick_penalty(scores, 'outcome')


def _check_candidates(candidates: Sequence[float], folds: int) -> list:
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise UsageError('ridge candidate list is empty')
    if any(c < 0 for c in candidates):
        raise UsageError('ridge candidates must be nonnegative')
    if folds < 2:
        raise UsageError('ridge cross-validation needs at least 2 folds')
    return candidates


def _pick_penalty(scores: Dict[float, float], label: str) -> float:
    best = None
    # Larger penalties first so exact ties keep the larger one
    for ridge in sorted(scores, reverse=True):
        if best is None or scores[ridge] < scores[best]:
            best = ridge
    if not np.isfinite(scores[best]):
        raise SingularDesign(f"no {label} ridge candidate could be fitted on every fold")
    logger.info(f"Selected {label} ridge {best} (cv loss {scores[best]:.6g})")
    return best


# Both nuisances at once

@dataclass(frozen=True, eq=False)
class NuisanceConfig:
    ps_features: FeatureMap = field(default_factory=FeatureMap)
    or_features: FeatureMap = field(default_factory=FeatureMap)
    epsilon: float = 0.01
    or_ridge: Union[float, str] = 0.0
    ps_ridge: Union[float, str] = 0.0
    candidates: Tuple[float, ...] = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)
    cv_folds: int = 5
    per_arm: bool = False
    max_iter: int = 100
    tol: float = 1e-8
    separation_norm: float = 1e6

    @classmethod
    def from_settings(cls, settings: Dict[str, Any], **overrides) -> 'NuisanceConfig':
        """Defaults from an application config dict, then explicit overrides"""
        n_knots = int(settings.get('SPLINE_KNOTS', 10))
        degree = int(settings.get('SPLINE_DEGREE', 3))
        for key in ('ps_features', 'or_features'):
            if isinstance(overrides.get(key), str):
                overrides[key] = FeatureMap.parse(overrides[key], n_knots, degree)
        values = dict(
            epsilon=float(settings.get('CLIP_EPSILON', 0.01)),
            candidates=tuple(settings.get('RIDGE_CANDIDATES', cls.candidates)),
            cv_folds=int(settings.get('CV_FOLDS', 5)),
            max_iter=int(settings.get('NEWTON_MAX_ITER', 100)),
            tol=float(settings.get('NEWTON_TOL', 1e-8)),
            separation_norm=float(settings.get('SEPARATION_NORM', 1e6)),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True, eq=False)
class Nuisances:
    outcome: Optional[OutcomeFit]
    propensity: Optional[PropensityFit]


def fit_outcome_model(subjects: Sequence[Subject], config: NuisanceConfig, seed: int = 0) -> OutcomeFit:
    """Outcome regression with ridge='cv' resolved by cross-validation"""
    subjects = list(subjects)
    ridge = config.or_ridge
    if ridge == 'cv':
        ridge = select_ridge_cv(subjects, config.or_features, config.cv_folds,
                                config.candidates, seed, config.per_arm)
    return fit_outcome(subjects, config.or_features, float(ridge), config.per_arm)


def fit_propensity_model(subjects: Sequence[Subject], config: NuisanceConfig, seed: int = 0) -> PropensityFit:
    """Propensity fit with ridge='cv' resolved by cross-validation"""
    subjects = list(subjects)
    ridge = config.ps_ridge
    if ridge == 'cv':
        ridge = select_propensity_ridge_cv(subjects, config.ps_features, config.cv_folds,
                                           config.candidates, config.epsilon, seed)
    return fit_propensity(subjects, config.ps_features, config.epsilon, float(ridge),
                          config.max_iter, config.tol, config.separation_norm)


def fit_nuisances(subjects: Sequence[Subject], config: NuisanceConfig, seed: int = 0) -> Nuisances:
    subjects = list(subjects)
    return Nuisances(fit_outcome_model(subjects, config, seed), fit_propensity_model(subjects, config, seed))
