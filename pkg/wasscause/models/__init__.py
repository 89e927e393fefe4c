"""
Domain value types: level grids, curves, subjects, estimates, bands and results
"""

from dataclasses import dataclass, field, fields
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from wasscause.utils.errors import (
    DomainViolation, GridMismatch, InsufficientData, NotFound, NumericalError, SchemaError
)

SCHEMA_VERSION = 1


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _jsonable(value: Any) -> Any:
    """Convert numpy containers to plain Python for serialization"""
    if isinstance(value, BaseModel):
        return value.to_dict()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class BaseModel:
    """Base model with common functionality"""

    def to_dict(self) -> Dict[str, Any]:
        """Convert model to dictionary"""
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)
                if not f.name.startswith('_')}


@dataclass(frozen=True)
class LevelGrid(BaseModel):
    """Midpoint probability levels u_j = (j - 0.5)/M, each with quadrature weight 1/M"""
    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise SchemaError('grid', f"grid size must be a positive integer, got {self.M}")

    @cached_property
    def levels(self) -> np.ndarray:
        return _frozen_array((np.arange(1, self.M + 1) - 0.5) / self.M)

    @property
    def weight(self) -> float:
        return 1.0 / self.M

    def check_same(self, other: 'LevelGrid'):
        if self.M != other.M:
            raise GridMismatch(f"grid sizes differ: {self.M} vs {other.M}")


@dataclass(frozen=True, eq=False)
class GridCurve(BaseModel):
    """A function of the probability level sampled on a grid (no monotonicity required)"""
    grid: LevelGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape != (self.grid.M,):
            raise GridMismatch(f"expected {self.grid.M} values, got shape {values.shape}")
        object.__setattr__(self, 'values', values)

    def __eq__(self, other):
        return (type(self) is type(other) and self.grid == other.grid
                and np.array_equal(self.values, other.values)
                and self._extra_key() == other._extra_key())

    def __hash__(self):
        return hash((type(self).__name__, self.grid.M, self.values.tobytes(), self._extra_key()))

    def _extra_key(self) -> tuple:
        return ()

    def to_dict(self) -> Dict[str, Any]:
        return {'M': self.grid.M, 'values': self.values.tolist()}


@dataclass(frozen=True, eq=False)
class QuantileCurve(GridCurve):
    """Quantile function on a level grid, nondecreasing and inside [domain_lo, domain_hi]"""
    domain_lo: float
    domain_hi: float

    def __post_init__(self):
        super().__post_init__()
        if not self.domain_lo <= self.domain_hi:
            raise DomainViolation(f"empty domain [{self.domain_lo}, {self.domain_hi}]")
        finite = np.isfinite(self.values)
        if not np.all(finite):
            raise DomainViolation(f"quantile values must be finite, found {self.values[~finite][0]!r}")
        if np.any(np.diff(self.values) < 0):
            raise DomainViolation('quantile values must be nondecreasing')
        if self.values.size and (self.values[0] < self.domain_lo or self.values[-1] > self.domain_hi):
            raise DomainViolation(
                f"quantile values [{self.values[0]}, {self.values[-1]}] leave "
                f"[{self.domain_lo}, {self.domain_hi}]"
            )

    def _extra_key(self) -> tuple:
        return (float(self.domain_lo), float(self.domain_hi))

    @property
    def bounds(self) -> Tuple[float, float]:
        return float(self.domain_lo), float(self.domain_hi)

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data.update(domain_lo=float(self.domain_lo), domain_hi=float(self.domain_hi))
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QuantileCurve':
        return cls(LevelGrid(int(data['M'])), data['values'], data['domain_lo'], data['domain_hi'])


@dataclass(frozen=True, eq=False)
class StepCdf(BaseModel):
    """Empirical distribution: sorted distinct atoms with weights summing to one"""
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _frozen_array(self.atoms)
        weights = _frozen_array(self.weights)
        if atoms.size == 0 or atoms.shape != weights.shape:
            raise InsufficientData('a step CDF needs at least one atom with a weight')
        if np.any(np.diff(atoms) <= 0):
            raise DomainViolation('atoms must be strictly increasing')
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainViolation('weights must be nonnegative and sum to 1')
        object.__setattr__(self, 'atoms', atoms)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> 'StepCdf':
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            raise InsufficientData('empty sample set')
        atoms, counts = np.unique(samples, return_counts=True)
        return cls(atoms, counts / samples.size)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return _frozen_array(np.minimum(np.cumsum(self.weights), 1.0))

    def cdf(self, t):
        """Right-continuous F(t) = P(atom <= t)"""
        idx = np.searchsorted(self.atoms, np.asarray(t, dtype=float), side='right')
        padded = np.concatenate(([0.0], self.cumulative))
        return padded[idx]

    @property
    def bounds(self) -> Tuple[float, float]:
        return float(self.atoms[0]), float(self.atoms[-1])


@dataclass(frozen=True, eq=False)
class Subject(BaseModel):
    """One unit: treatment label, covariates, raw observations and the lifted quantile curve"""
    id: str
    treatment: int
    covariates: np.ndarray
    lifted: QuantileCurve
    observations: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.treatment not in (0, 1):
            raise SchemaError('treatment', f"subject {self.id}: treatment must be 0 or 1, got {self.treatment}")
        object.__setattr__(self, 'treatment', int(self.treatment))
        object.__setattr__(self, 'covariates', _frozen_array(np.atleast_1d(self.covariates)))
        if self.observations is not None:
            object.__setattr__(self, 'observations', _frozen_array(self.observations))


@dataclass(frozen=True, eq=False)
class FoldPlan(BaseModel):
    """Partition of subject indices into K folds; K == 1 is the no-split plan"""
    K: int
    folds: Tuple[np.ndarray, ...]
    seed: int

    def training(self, k: int) -> np.ndarray:
        if self.K == 1:
            return self.folds[0]
        return np.concatenate([fold for j, fold in enumerate(self.folds) if j != k])


@dataclass(frozen=True, eq=False)
class EffectEstimate(BaseModel):
    """Effect curve D(u) = mu1(u) - mu0(u) in level coordinates plus barycentre curves"""
    grid: LevelGrid
    mu1_raw: GridCurve
    mu0_raw: GridCurve
    mu1: QuantileCurve
    mu0: QuantileCurve
    reference: str
    estimator: str
    n: int
    influence: Optional[np.ndarray] = None
    repetitions: Tuple['EffectEstimate', ...] = ()

    @cached_property
    def effect(self) -> np.ndarray:
        return _frozen_array(self.mu1_raw.values - self.mu0_raw.values)

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.mu0.bounds

    def to_dict(self) -> Dict[str, Any]:
        return {
            'M': self.grid.M,
            'effect': self.effect.tolist(),
            'mu1_raw': self.mu1_raw.values.tolist(),
            'mu0_raw': self.mu0_raw.values.tolist(),
            'mu1': self.mu1.values.tolist(),
            'mu0': self.mu0.values.tolist(),
            'bounds': list(self.bounds),
            'reference': self.reference,
            'estimator': self.estimator,
            'n': self.n,
        }


@dataclass(frozen=True, eq=False)
class CovKernel(BaseModel):
    """Discretized covariance function C(u_i, u_j) of the influence process"""
    grid: LevelGrid
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.shape != (self.grid.M, self.grid.M):
            raise GridMismatch(f"kernel shape {matrix.shape} does not match grid size {self.grid.M}")
        if not np.all(np.isfinite(matrix)):
            raise NumericalError('kernel has non-finite entries')
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > 1e-10:
            raise NumericalError('kernel matrix is not symmetric')
        matrix = (matrix + matrix.T) / 2.0
        eigenvalues = np.linalg.eigvalsh(matrix)
        top = max(float(eigenvalues[-1]), 0.0)
        if eigenvalues[0] < -1e-8 * top and eigenvalues[0] < -1e-12:
            raise NumericalError(f"kernel is not positive semidefinite (smallest eigenvalue {eigenvalues[0]:.3g})")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    def operator_norm(self) -> float:
        """Top eigenvalue of the integral operator under 1/M quadrature"""
        return float(np.linalg.eigvalsh(self.matrix * self.grid.weight)[-1])

    def to_dict(self) -> Dict[str, Any]:
        return {'M': self.grid.M, 'matrix': self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class IndividualTransport(BaseModel):
    """Observed and counterfactual quantile curves of one subject with the implied map"""
    subject_id: str
    observed: QuantileCurve
    counterfactual: QuantileCurve
    mean_shift: float
    clamped: bool

    @property
    def pairs(self) -> np.ndarray:
        """Samples (s, T_i(s)) of the individual transport map at the observed quantiles"""
        return np.column_stack([self.observed.values, self.counterfactual.values])


class Decision(str, Enum):
    REJECT = 'reject'
    FAIL_TO_REJECT = 'fail-to-reject'


@dataclass(frozen=True, eq=False)
class Band(BaseModel):
    """Simultaneous band center +/- critical/sqrt(n)"""
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    critical: float
    alpha: float
    n: int
    B: int

    @classmethod
    def from_center(cls, center, critical: float, n: int, alpha: float, B: int) -> 'Band':
        center = _frozen_array(center)
        half_width = critical / np.sqrt(n)
        return cls(center, _frozen_array(center - half_width), _frozen_array(center + half_width),
                   float(critical), float(alpha), int(n), int(B))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Band':
        return cls(_frozen_array(data['center']), _frozen_array(data['lower']), _frozen_array(data['upper']),
                   float(data['critical']), float(data['alpha']), int(data['n']), int(data['B']))


@dataclass(frozen=True, eq=False)
class PointwiseInterval(BaseModel):
    """Per-level interval (not simultaneous over levels)"""
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    label: str = 'pointwise-per-level'


@dataclass(frozen=True)
class NormTest(BaseModel):
    statistic: float
    critical: float
    p_value: float
    decision: Decision
    alpha: float
    B: int


@dataclass(frozen=True)
class ScalarInterval(BaseModel):
    estimate: float
    lower: float
    upper: float
    alpha: float


@dataclass(frozen=True)
class SimConfig(BaseModel):
    """Monte Carlo study settings"""
    n: int
    replicates: int
    k_obs: int = 1001
    scenario: str = 'linear'
    ps_specs: Tuple[str, ...] = ('correct',)
    or_specs: Tuple[str, ...] = ('correct',)
    estimators: Tuple[str, ...] = ('or', 'ipw', 'dr')
    folds: int = 5
    repeats: int = 20
    grid: int = 201
    seed: int = 0
    workers: int = 1
    alpha: float = 0.05
    resamples: int = 500
    coverage: bool = False


@dataclass(frozen=True)
class MCCell(BaseModel):
    """Aggregated metrics of one estimator/specification cell"""
    estimator: str
    ps_spec: str
    or_spec: str
    n: int
    bias: Optional[float]
    bias_se: Optional[float]
    rmise: Optional[float]
    rmise_se: Optional[float]
    replicates: int
    failures: int
    coverage: Optional[float] = None


@dataclass(frozen=True)
class MCResult(BaseModel):
    config: SimConfig
    cells: Tuple[MCCell, ...]

    def cell(self, estimator: str, ps_spec: str = '-', or_spec: str = '-') -> MCCell:
        for cell in self.cells:
            if (cell.estimator, cell.ps_spec, cell.or_spec) == (estimator, ps_spec, or_spec):
                return cell
        raise KeyError((estimator, ps_spec, or_spec))

    def table_rows(self) -> List[Dict[str, Any]]:
        """One row per cell, metrics scaled by 100"""
        def scaled(value):
            return None if value is None else 100.0 * value

        return [{
            'estimator': cell.estimator,
            'ps_spec': cell.ps_spec,
            'or_spec': cell.or_spec,
            'n': cell.n,
            'bias_x100': scaled(cell.bias),
            'bias_se_x100': scaled(cell.bias_se),
            'rmise_x100': scaled(cell.rmise),
            'rmise_se_x100': scaled(cell.rmise_se),
            'replicates': cell.replicates,
            'failures': cell.failures,
            'coverage': cell.coverage,
        } for cell in self.cells]


@dataclass(frozen=True, eq=False)
class Dataset(BaseModel):
    subjects: Tuple[Subject, ...]
    covariate_names: Tuple[str, ...]
    treatment_column: str
    bounds: Tuple[float, float]
    provenance: Dict[str, Any]

    def subject(self, subject_id: str) -> Subject:
        for subject in self.subjects:
            if subject.id == str(subject_id):
                return subject
        raise NotFound(f"subject {subject_id} is not in the dataset")


@dataclass
class ResultDocument(BaseModel):
    """Versioned output of an estimate or counterfactual command"""
    config: Dict[str, Any]
    grid: int
    levels: List[float]
    effect: List[float]
    mu1_raw: List[float]
    mu0_raw: List[float]
    mu1: List[float]
    mu0: List[float]
    reference: str
    estimator: str
    n: int
    w2_effect: float
    seeds: Dict[str, int]
    band: Optional[Dict[str, Any]] = None
    tests: Optional[Dict[str, Any]] = None
    intervals: Optional[Dict[str, Any]] = None
    counterfactual: Optional[Dict[str, Any]] = None
    timings: Dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ResultDocument':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SchemaError(unknown[0], 'unknown field in result document')
        version = data.get('schema_version')
        if version != SCHEMA_VERSION:
            raise SchemaError('schema_version', f"unsupported version {version!r}")
        return cls(**data)
