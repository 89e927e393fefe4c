"""
Monte Carlo simulation lab: data generation, error metrics and replicate orchestration
"""

import logging
import os
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from functools import lru_cache, partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values
from scipy.integrate import quad
from scipy.special import expit

from wasscause.models import (
    EffectEstimate, LevelGrid, MCCell, MCResult, QuantileCurve, SimConfig, Subject
)
from wasscause.services.effects import (
    estimate_cf, estimate_cf_median, estimate_dr, estimate_ipw, estimate_or
)
from wasscause.services.inference import band_covers, estimate_kernel, scb
from wasscause.services.nuisance import FeatureMap, NuisanceConfig, fit_outcome_model, fit_propensity_model
from wasscause.services.transport import empirical_quantile, grid_norm
from wasscause.utils.errors import ConfigError, WassCauseError
from wasscause.utils.validators import validate_sim_config

logger = logging.getLogger(__name__)

OUTCOME_BOUNDS = (0.0, 1.0)
MEDIAN_EFFECT = 0.125
BAND_ESTIMATORS = ('dr', 'cf', 'cfmed')


def _covariate_term(x, scenario: str):
    return np.sin(np.pi * x) if scenario == 'sine' else x


@lru_cache(maxsize=None)
def expected_treatment(scenario: str = 'linear') -> float:
    """E(A) = integral of expit(1 + h(x)) / 2 over [-1, 1], by adaptive quadrature"""
    value, _ = quad(lambda x: expit(1.0 + _covariate_term(x, scenario)) / 2.0, -1.0, 1.0,
                    epsabs=1e-13, epsrel=1e-13, limit=200)
    return float(value)


def dgp_quantile(levels, a, h, eps, expected_a: float):
    """Y^{-1}(u) = (-E(A) + a + h + eps) sin(pi u) / 8 + u; arrays broadcast"""
    levels = np.asarray(levels, dtype=float)
    return (-expected_a + a + h + eps) * np.sin(np.pi * levels) / 8.0 + levels


@dataclass(frozen=True, eq=False)
class DgpSample:
    """Simulated subjects together with the oracle quantities that generated them"""
    subjects: Tuple[Subject, ...]
    X: np.ndarray
    A: np.ndarray
    eps: np.ndarray
    potential1: Tuple[QuantileCurve, ...]
    potential0: Tuple[QuantileCurve, ...]
    expected_treatment: float
    scenario: str


def dgp_sample(n: int, k_obs: int, scenario: str = 'linear', seed: Any = 0,
               grid: Optional[LevelGrid] = None) -> DgpSample:
    """
    Draw n subjects: X ~ U[-1, 1], A | X ~ Bernoulli(expit(1 + h(X))), eps ~ U[-0.5, 0.5]
    and k_obs observations per subject by inverse-transform sampling.
    """
    if n < 1 or k_obs < 1:
        raise ConfigError('n' if n < 1 else 'k_obs', 'must be at least 1')
    grid = grid or LevelGrid(201)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    expected_a = expected_treatment(scenario)

    X = rng.uniform(-1.0, 1.0, n)
    h = _covariate_term(X, scenario)
    A = rng.binomial(1, expit(1.0 + h))
    eps = rng.uniform(-0.5, 0.5, n)
    draws = rng.uniform(0.0, 1.0, (n, k_obs))
    observations = dgp_quantile(draws, A[:, None], h[:, None], eps[:, None], expected_a)

    subjects, potential1, potential0 = [], [], []
    for i in range(n):
        lifted = empirical_quantile(observations[i], grid, OUTCOME_BOUNDS)
        subjects.append(Subject(f"s{i}", int(A[i]), np.array([X[i]]), lifted))
        for arm, bucket in ((1, potential1), (0, potential0)):
            values = np.clip(dgp_quantile(grid.levels, arm, h[i], eps[i], expected_a), *OUTCOME_BOUNDS)
            bucket.append(QuantileCurve(grid, values, *OUTCOME_BOUNDS))

    return DgpSample(tuple(subjects), X, A, eps, tuple(potential1), tuple(potential0), expected_a, scenario)


def true_effect(grid: LevelGrid) -> np.ndarray:
    """sin(pi u) / 8 at the level nodes"""
    return np.sin(np.pi * grid.levels) / 8.0


def metric_bias_median(estimate: EffectEstimate) -> float:
    """Effect at level 0.5 minus the true median effect"""
    return float(np.interp(0.5, estimate.grid.levels, estimate.effect)) - MEDIAN_EFFECT


def metric_rmise(estimate: EffectEstimate) -> float:
    return grid_norm(estimate.effect - true_effect(estimate.grid), estimate.grid)


# Configs

def nuisance_config_for(ps_spec: str, or_spec: str, scenario: str) -> NuisanceConfig:
    """Map correct / square / adaptive specifications to feature maps"""
    def features(spec):
        if spec == 'correct':
            return FeatureMap('sine' if scenario == 'sine' else 'identity')
        if spec == 'square':
            return FeatureMap('square')
        return FeatureMap('bspline')

    return NuisanceConfig(
        ps_features=features(ps_spec),
        or_features=features(or_spec),
        ps_ridge='cv' if ps_spec == 'adaptive' else 0.0,
        or_ridge='cv' if or_spec == 'adaptive' else 0.0,
    )


def _sim_defaults() -> Dict[str, Any]:
    return {f.name: f.default for f in fields(SimConfig) if f.name not in ('n', 'replicates')}


def build_sim_config(values: Dict[str, Optional[str]]) -> SimConfig:
    """Typed SimConfig from raw KEY=VALUE settings; the first invalid field raises ConfigError"""
    result = validate_sim_config(values, _sim_defaults())
    if not result['valid']:
        for error in result['errors']:
            logger.warning(f"Invalid simulation config: {error}")
        field, _, message = result['errors'][0].partition(': ')
        raise ConfigError(field, message)
    return SimConfig(**result['settings'])


def load_sim_config(path: str) -> SimConfig:
    if not os.path.isfile(path):
        raise ConfigError('config', f"file not found: {path}")
    return build_sim_config(dotenv_values(path))


def cell_keys(config: SimConfig) -> List[Tuple[str, str, str]]:
    """(estimator, ps_spec, or_spec) rows in table order"""
    keys = []
    for estimator in config.estimators:
        if estimator == 'or':
            keys.extend(('or', '-', spec) for spec in config.or_specs)
        elif estimator == 'ipw':
            keys.extend(('ipw', spec, '-') for spec in config.ps_specs)
        else:
            keys.extend((estimator, ps, orr) for ps in config.ps_specs for orr in config.or_specs)
    return keys


# Replicates

def replicate_seed(base_seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(r)]).generate_state(1)[0])


def _estimate_cell(key, sample: DgpSample, config: SimConfig, fits: Dict, seed: int) -> EffectEstimate:
    estimator, ps_spec, or_spec = key
    subjects = sample.subjects

    def outcome(spec):
        if ('or', spec) not in fits:
            config_for_spec = nuisance_config_for('correct', spec, config.scenario)
            fits[('or', spec)] = fit_outcome_model(subjects, config_for_spec, seed)
        return fits[('or', spec)]

    def propensity(spec):
        if ('ps', spec) not in fits:
            config_for_spec = nuisance_config_for(spec, 'correct', config.scenario)
            fits[('ps', spec)] = fit_propensity_model(subjects, config_for_spec, seed)
        return fits[('ps', spec)]

    if estimator == 'or':
        return estimate_or(subjects, outcome(or_spec))
    if estimator == 'ipw':
        return estimate_ipw(subjects, propensity(ps_spec))
    if estimator == 'dr':
        return estimate_dr(subjects, outcome(or_spec), propensity(ps_spec))
    nuisance_config = nuisance_config_for(ps_spec, or_spec, config.scenario)
    if estimator == 'cf':
        return estimate_cf(subjects, config.folds, nuisance_config, seed=seed)
    return estimate_cf_median(subjects, config.folds, config.repeats, nuisance_config, seed=seed)


def run_replicate(config: SimConfig, r: int) -> Dict[Tuple[str, str, str], Dict[str, Any]]:
    """One replicate: generate data, fit, estimate and score every cell"""
    seed = replicate_seed(config.seed, r)
    grid = LevelGrid(config.grid)
    sample = dgp_sample(config.n, config.k_obs, config.scenario,
                        np.random.default_rng([int(config.seed), int(r)]), grid)
    truth = true_effect(grid)
    fits = {}
    outcomes = {}
    for key in cell_keys(config):
        try:
            estimate = _estimate_cell(key, sample, config, fits, seed)
            record = {'ok': True, 'bias': metric_bias_median(estimate), 'rmise': metric_rmise(estimate),
                      'covered': None}
            if config.coverage and key[0] in BAND_ESTIMATORS:
                band = scb(estimate, estimate_kernel(estimate), config.alpha, config.resamples, seed)
                record['covered'] = band_covers(band, truth)
        except WassCauseError as e:
            logger.warning(f"Replicate {r} cell {'/'.join(key)} failed: {type(e).__name__}: {e}")
            record = {'ok': False, 'error': f"{type(e).__name__}: {e}"}
        outcomes[key] = record
    return outcomes


def _mean_and_se(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    array = np.asarray(values, dtype=float)
    if array.size < 2:
        return float(array.mean()), None
    return float(array.mean()), float(array.std(ddof=1) / np.sqrt(array.size))


def aggregate_replicates(config: SimConfig, replicates: Sequence[Dict]) -> MCResult:
    """Combine per-replicate records in replicate order"""
    cells = []
    for key in cell_keys(config):
        records = [replicate[key] for replicate in replicates]
        good = [record for record in records if record['ok']]
        bias, bias_se = _mean_and_se([record['bias'] for record in good])
        rmise, rmise_se = _mean_and_se([record['rmise'] for record in good])
        flags = [record['covered'] for record in good if record.get('covered') is not None]
        coverage = float(np.mean(flags)) if flags else None
        cells.append(MCCell(key[0], key[1], key[2], config.n, bias, bias_se, rmise, rmise_se,
                            len(good), len(records) - len(good), coverage))
    return MCResult(config, tuple(cells))


class _Progress:
    """Thread-safe progress counter logging every 10%"""

    def __init__(self, total: int):
        self.total = total
        self.done = 0
        self.next_mark = 1
        self.lock = threading.Lock()

    def step(self):
        with self.lock:
            self.done += 1
            while self.next_mark <= 10 and self.done * 10 >= self.next_mark * self.total:
                logger.info(f"Monte Carlo progress: {self.done}/{self.total} replicates")
                self.next_mark += 1


def run_mc(config: SimConfig, workers: Optional[int] = None) -> MCResult:
    """Run all replicates; results do not depend on the worker count"""
    workers = config.workers if workers is None else workers
    logger.info(f"Starting Monte Carlo: n={config.n} replicates={config.replicates} "
                f"scenario={config.scenario} cells={len(cell_keys(config))} workers={workers}")
    progress = _Progress(config.replicates)
    task = partial(run_replicate, config)
    indices = range(config.replicates)

    replicates = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            # map yields in submission order
            for outcome in executor.map(task, indices, chunksize=max(1, config.replicates // (4 * workers))):
                replicates.append(outcome)
                progress.step()
    else:
        for r in indices:
            replicates.append(task(r))
            progress.step()

    result = aggregate_replicates(config, replicates)
    failures = sum(cell.failures for cell in result.cells)
    if failures:
        logger.warning(f"{failures} cell estimate(s) failed across replicates and were excluded")
    return result


def coverage_experiment(config: SimConfig, alpha: Optional[float] = None,
                        B: Optional[int] = None) -> Dict[str, Optional[float]]:
    """Share of replicates whose band contains the true effect at every node, per estimator"""
    estimators = tuple(e for e in config.estimators if e in BAND_ESTIMATORS) or ('dr',)
    config = replace(
        config,
        estimators=estimators,
        ps_specs=('correct',),
        or_specs=('correct',),
        coverage=True,
        alpha=config.alpha if alpha is None else float(alpha),
        resamples=config.resamples if B is None else int(B),
    )
    result = run_mc(config)
    return {cell.estimator: cell.coverage for cell in result.cells}
