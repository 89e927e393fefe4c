"""
Dataset ingestion from long-format or precomputed-quantile CSV files
"""

import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from wasscause.models import Dataset, LevelGrid, QuantileCurve, Subject
from wasscause.services.transport import empirical_quantile
from wasscause.utils.errors import GridMismatch, InsufficientData, NotFound, SchemaError, UsageError
from wasscause.utils.validators import validate_dataset_columns

logger = logging.getLogger(__name__)


def finite_cells(frame: pd.DataFrame, columns: List[str]) -> np.ndarray:
    """Numeric block of the given columns; any blank, non-numeric or infinite cell is a schema error"""
    values = frame[columns].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise SchemaError(columns[col], f"data row {frame.index[row] + 1}: expected a finite number, "
                                        f"found {frame[columns].iat[row, col]!r}")
    return values


class DatasetParser:
    """Turns a CSV file into subjects with lifted quantile curves"""

    def __init__(self, treatment: str, covariates: Sequence[str], bounds: Tuple[float, float],
                 grid: LevelGrid, id_column: str = 'subject_id', value_column: str = 'value',
                 min_obs: int = 1, drop_zero: bool = False):
        self.treatment = treatment
        self.covariates = list(covariates)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.grid = grid
        self.id_column = id_column
        self.value_column = value_column
        self.min_obs = max(int(min_obs), 1)
        self.drop_zero = drop_zero

    def read(self, path: str) -> pd.DataFrame:
        if not os.path.isfile(path):
            raise NotFound(f"data file not found: {path}")
        try:
            return pd.read_csv(path, dtype={self.id_column: str}, encoding='utf-8')
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise SchemaError('file', f"cannot parse {path}: {e}")

    def _require(self, frame: pd.DataFrame, columns: List[str]):
        result = validate_dataset_columns(frame.columns, columns, self.treatment, self.covariates)
        if result['missing']:
            raise SchemaError(result['missing'][0], 'required column is missing')
        if not result['valid']:
            raise UsageError(result['errors'][0])

    def _treatments(self, frame: pd.DataFrame) -> pd.Series:
        values = pd.to_numeric(frame[self.treatment], errors='coerce')
        raw = frame[self.treatment]
        bad = (values.isna() & raw.notna()) | (values.notna() & ~values.isin([0, 1]))
        if bad.any():
            raise SchemaError(self.treatment, f"treatment must be 0 or 1, found {raw[bad].iloc[0]!r}")
        return values

    def _covariate_vector(self, rows: pd.DataFrame, subject_id: Any) -> Optional[np.ndarray]:
        if not self.covariates:
            return np.empty(0)
        block = rows[self.covariates].apply(pd.to_numeric, errors='coerce')
        for column in self.covariates:
            if block[column].nunique(dropna=False) > 1:
                raise SchemaError(column, f"subject {subject_id} has conflicting covariate values")
        vector = block.iloc[0].to_numpy(dtype=float)
        if not np.all(np.isfinite(vector)):
            return None
        return vector

    def parse_long(self, path: str) -> Dataset:
        frame = self.read(path)
        self._require(frame, [self.id_column, self.treatment, self.value_column] + self.covariates)
        provenance: Dict[str, Any] = {'file': os.path.abspath(path), 'format': 'long', 'rows': int(len(frame))}

        treatments = self._treatments(frame)
        missing_treatment = treatments.isna()
        provenance['rows_missing_treatment'] = int(missing_treatment.sum())
        frame = frame.assign(**{self.treatment: treatments})[~missing_treatment]

        values = pd.to_numeric(frame[self.value_column], errors='coerce')
        keep = values.notna() & np.isfinite(values)
        provenance['rows_invalid_value'] = int((~keep).sum())
        zero = keep & (values == 0)
        provenance['rows_zero'] = int(zero.sum()) if self.drop_zero else 0
        if self.drop_zero:
            keep &= ~zero
        lo, hi = self.bounds
        outside = keep & ((values < lo) | (values > hi))
        provenance['rows_out_of_bounds'] = int(outside.sum())
        keep &= ~outside
        frame = frame.assign(**{self.value_column: values})[keep]

        subjects = []
        below_min, missing_covariates = 0, 0
        for subject_id, rows in frame.groupby(self.id_column, sort=False):
            if rows[self.treatment].nunique() != 1:
                raise SchemaError(self.treatment, f"subject {subject_id} has more than one treatment value")
            if len(rows) < self.min_obs:
                below_min += 1
                continue
            covariates = self._covariate_vector(rows, subject_id)
            if covariates is None:
                missing_covariates += 1
                continue
            observations = rows[self.value_column].to_numpy(dtype=float)
            lifted = empirical_quantile(observations, self.grid, self.bounds)
            subjects.append(Subject(str(subject_id), int(rows[self.treatment].iloc[0]), covariates,
                                    lifted, observations))

        provenance.update(subjects=len(subjects), excluded_min_obs=below_min,
                          excluded_missing_covariates=missing_covariates)
        return self._finish(subjects, provenance)

    def parse_quantiles(self, path: str) -> Dataset:
        """Wide format: one row per subject with columns q_1 .. q_M"""
        frame = self.read(path)
        self._require(frame, [self.id_column, self.treatment] + self.covariates)
        q_columns = [column for column in frame.columns if str(column).startswith('q_')]
        expected = [f"q_{j}" for j in range(1, self.grid.M + 1)]
        if sorted(q_columns, key=lambda c: int(c[2:]) if c[2:].isdigit() else -1) != expected:
            raise GridMismatch(f"expected quantile columns q_1..q_{self.grid.M}, found {len(q_columns)}")
        provenance: Dict[str, Any] = {'file': os.path.abspath(path), 'format': 'quantile', 'rows': int(len(frame))}

        treatments = self._treatments(frame)
        missing_treatment = treatments.isna()
        provenance['rows_missing_treatment'] = int(missing_treatment.sum())
        frame = frame.assign(**{self.treatment: treatments})[~missing_treatment]

        quantiles = finite_cells(frame, expected)
        subjects, missing_covariates = [], 0
        for position, (_, row) in enumerate(frame.iterrows()):
            covariates = self._covariate_vector(row.to_frame().T, row[self.id_column])
            if covariates is None:
                missing_covariates += 1
                continue
            curve = QuantileCurve(self.grid, quantiles[position], *self.bounds)
            subjects.append(Subject(str(row[self.id_column]), int(row[self.treatment]), covariates, curve))

        provenance.update(subjects=len(subjects), excluded_min_obs=0,
                          excluded_missing_covariates=missing_covariates)
        return self._finish(subjects, provenance)

    def _finish(self, subjects: List[Subject], provenance: Dict[str, Any]) -> Dataset:
        ids = [subject.id for subject in subjects]
        if len(set(ids)) != len(ids):
            raise SchemaError(self.id_column, 'subject ids must be unique')
        if not subjects:
            raise InsufficientData('no subjects left after filtering')
        logger.info(
            f"Loaded {provenance['subjects']} subjects from {provenance['file']} "
            f"(excluded: {provenance['excluded_min_obs']} below min-obs, "
            f"{provenance['excluded_missing_covariates']} missing covariates; "
            f"dropped rows: {provenance['rows_missing_treatment']} missing treatment)"
        )
        return Dataset(tuple(subjects), tuple(self.covariates), self.treatment, self.bounds, provenance)


def parse_dataset(path: str, treatment: str, covariates: Sequence[str], bounds: Tuple[float, float],
                  grid: LevelGrid, id_column: str = 'subject_id', value_column: str = 'value',
                  min_obs: int = 1, drop_zero: bool = False, quantile_input: bool = False) -> Dataset:
    parser = DatasetParser(treatment, covariates, bounds, grid, id_column, value_column, min_obs, drop_zero)
    if quantile_input:
        return parser.parse_quantiles(path)
    return parser.parse_long(path)


def read_reference_curve(path: str, grid: LevelGrid, bounds: Tuple[float, float]) -> QuantileCurve:
    """External reference: a CSV with a 'value' column of M quantiles, or raw samples in 'sample'"""
    if not os.path.isfile(path):
        raise NotFound(f"reference file not found: {path}")
    frame = pd.read_csv(path)
    if 'value' in frame.columns:
        values = finite_cells(frame, ['value'])[:, 0]
        if values.size != grid.M:
            raise GridMismatch(f"reference curve has {values.size} values, grid has {grid.M}")
        return QuantileCurve(grid, values, *bounds)
    if 'sample' in frame.columns:
        samples = frame.dropna(subset=['sample'])
        return empirical_quantile(finite_cells(samples, ['sample'])[:, 0], grid, bounds)
    raise SchemaError('value', "reference file needs a 'value' or 'sample' column")
