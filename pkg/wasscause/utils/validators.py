"""
Input validation for command flags and simulation configs
"""

import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

from wasscause.utils.errors import UsageError

ESTIMATORS = ('or', 'ipw', 'dr', 'cf', 'cfmed')
SCENARIOS = ('linear', 'sine')
SIM_SPECS = ('correct', 'square', 'adaptive')
TRUE_VALUES = {'1', 'true', 'yes', 'on'}
FALSE_VALUES = {'0', 'false', 'no', 'off', ''}

SIM_FIELDS = ('n', 'replicates', 'k_obs', 'scenario', 'ps_specs', 'or_specs', 'estimators', 'folds',
              'repeats', 'grid', 'seed', 'workers', 'alpha', 'resamples', 'coverage')


def validate_dataset_columns(columns: Sequence[Any], required: Sequence[str],
                             treatment: Optional[str] = None, covariates: Sequence[str] = ()) -> Dict[str, Any]:
    """Check a data file header against the columns a parse needs"""
    present = {str(column) for column in columns}
    missing = [column for column in required if column not in present]
    errors = [f"{column}: required column is missing" for column in missing]

    if treatment is not None and treatment in covariates:
        errors.append(f"{treatment}: the treatment column cannot also be a covariate")
    repeated = sorted({column for column in covariates if list(covariates).count(column) > 1})
    for column in repeated:
        errors.append(f"{column}: covariate listed more than once")

    return {'valid': len(errors) == 0, 'missing': missing, 'errors': errors}


def parse_list(raw: Optional[str]) -> List[str]:
    """Comma separated items, blanks dropped"""
    if raw is None:
        return []
    return [item.strip() for item in str(raw).split(',') if item.strip()]


def parse_bounds(raw: str) -> Tuple[float, float]:
    """Parse 'LO,HI' into a finite interval with LO < HI"""
    items = parse_list(raw)
    if len(items) != 2:
        raise UsageError(f"bounds must be LO,HI, got {raw!r}")
    try:
        lo, hi = float(items[0]), float(items[1])
    except ValueError:
        raise UsageError(f"bounds must be numbers, got {raw!r}")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise UsageError(f"bounds must be finite with LO < HI, got {raw!r}")
    return lo, hi


def validate_estimate_flags(estimator: str, folds: Optional[int], repeats: Optional[int],
                            alpha: float, resamples: int, grid: int) -> Dict[str, Any]:
    """Check flag combinations of the estimate and counterfactual commands"""
    errors = []

    if estimator not in ESTIMATORS:
        errors.append(f"--estimator must be one of {', '.join(ESTIMATORS)}")
    if repeats is not None and estimator != 'cfmed':
        errors.append('--repeats only applies to --estimator cfmed')
    if repeats is not None and repeats < 1:
        errors.append('--repeats must be at least 1')
    if folds is not None and estimator in ('cf', 'cfmed') and folds < 2:
        errors.append('--folds must be at least 2 for cross-fitting')
    if not 0 < alpha < 1:
        errors.append('--alpha must lie in (0, 1)')
    if resamples < 1:
        errors.append('--resamples must be at least 1')
    if grid < 1:
        errors.append('--grid must be at least 1')

    return {'valid': len(errors) == 0, 'errors': errors}


def _as_int(values: Dict[str, str], name: str, minimum: int, errors: List[str]) -> Optional[int]:
    raw = values.get(name)
    try:
        value = int(str(raw).strip())
    except (TypeError, ValueError):
        errors.append(f"{name}: expected an integer, got {raw!r}")
        return None
    if value < minimum:
        errors.append(f"{name}: must be at least {minimum}, got {value}")
        return None
    return value


def _as_choices(values: Dict[str, str], name: str, choices: Tuple[str, ...], errors: List[str]) -> Optional[tuple]:
    items = tuple(item.lower() for item in parse_list(values.get(name)))
    if not items:
        errors.append(f"{name}: at least one of {', '.join(choices)} is required")
        return None
    unknown = [item for item in items if item not in choices]
    if unknown:
        errors.append(f"{name}: unknown value(s) {', '.join(unknown)}; expected {', '.join(choices)}")
        return None
    return items


def validate_sim_config(values: Dict[str, Optional[str]], defaults: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate KEY=VALUE simulation settings. Missing keys fall back to defaults;
    n and replicates are required. Returns the typed settings under 'settings'.
    """
    errors = []
    values = {str(k).strip().lower(): v for k, v in values.items()}

    unknown = sorted(set(values) - set(SIM_FIELDS))
    for name in unknown:
        errors.append(f"{name}: unknown field")
    for name in ('n', 'replicates'):
        if values.get(name) in (None, ''):
            errors.append(f"{name}: required")

    merged = {name: defaults[name] for name in SIM_FIELDS if name in defaults}
    for name in SIM_FIELDS:
        if values.get(name) not in (None, ''):
            merged[name] = values[name]
    merged = {name: ','.join(value) if isinstance(value, tuple) else str(value) for name, value in merged.items()}

    settings = {}
    if not any(e.startswith(('n:', 'replicates:')) for e in errors):
        settings['n'] = _as_int(merged, 'n', 1, errors)
        settings['replicates'] = _as_int(merged, 'replicates', 1, errors)
    for name, minimum in (('k_obs', 1), ('folds', 1), ('repeats', 1), ('grid', 1), ('seed', 0),
                          ('workers', 1), ('resamples', 1)):
        settings[name] = _as_int(merged, name, minimum, errors)

    scenario = merged.get('scenario', '').strip().lower()
    if scenario not in SCENARIOS:
        errors.append(f"scenario: expected one of {', '.join(SCENARIOS)}, got {scenario!r}")
    settings['scenario'] = scenario
    settings['ps_specs'] = _as_choices(merged, 'ps_specs', SIM_SPECS, errors)
    settings['or_specs'] = _as_choices(merged, 'or_specs', SIM_SPECS, errors)
    settings['estimators'] = _as_choices(merged, 'estimators', ESTIMATORS, errors)

    try:
        alpha = float(merged.get('alpha', ''))
        if not 0 < alpha < 1:
            raise ValueError
        settings['alpha'] = alpha
    except ValueError:
        errors.append(f"alpha: expected a number in (0, 1), got {merged.get('alpha')!r}")

    coverage = merged.get('coverage', 'false').strip().lower()
    if coverage in TRUE_VALUES:
        settings['coverage'] = True
    elif coverage in FALSE_VALUES:
        settings['coverage'] = False
    else:
        errors.append(f"coverage: expected true or false, got {coverage!r}")

    estimators = settings.get('estimators') or ()
    folds = settings.get('folds')
    if folds is not None and folds < 2 and any(e in ('cf', 'cfmed') for e in estimators):
        errors.append('folds: cross-fitting needs at least 2 folds')

    return {'valid': len(errors) == 0, 'errors': errors, 'settings': settings}
