"""
Estimate and counterfactual commands
"""

import logging
import time
from typing import Any, Dict

import click
import numpy as np
import pandas as pd

from wasscause.models import LevelGrid, ResultDocument
from wasscause.models.store import ResultStore
from wasscause.services.dataset import parse_dataset, read_reference_curve
from wasscause.services.effects import (
    effect_w2_norm, individual_transport, parse_reference, render_effect_map, resolve_reference, run_estimator
)
from wasscause.services.inference import (
    estimate_kernel, mean_shift_interval, norm_test, scb, test_null_zero_band, treatment_interval, w2_interval
)
from wasscause.services.nuisance import NuisanceConfig
from wasscause.utils.error_handlers import handle_errors
from wasscause.utils.errors import UsageError
from wasscause.utils.validators import parse_bounds, parse_list, validate_estimate_flags

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
DEFAULT_REPEATS = 20
BAND_ESTIMATORS = ('dr', 'cf', 'cfmed')


def estimate_options(app):
    """Flags shared by estimate and counterfactual"""
    config = app.config
    options = [
        click.option('--data', 'data', required=True, type=click.Path(dir_okay=False), help='Input CSV file'),
        click.option('--treatment', required=True, help='Treatment column (0/1)'),
        click.option('--covariates', default='', help='Comma separated covariate columns'),
        click.option('--bounds', required=True, help='Outcome interval LO,HI'),
        click.option('--grid', type=int, default=lambda: config['GRID_SIZE'], show_default='GRID_SIZE',
                     help='Number of probability levels'),
        click.option('--estimator', type=click.Choice(['or', 'ipw', 'dr', 'cf', 'cfmed']), default='dr',
                     show_default=True),
        click.option('--folds', type=int, default=None, help='Cross-fitting folds (default 5)'),
        click.option('--repeats', type=int, default=None, help='Cross-fitting repetitions for cfmed (default 20)'),
        click.option('--reference', default='uniform', show_default=True,
                     help='uniform | bary0 | bary1 | subject:ID | file:PATH'),
        click.option('--ps-features', default='identity', show_default=True,
                     help='identity | square | sine | bspline[:knots] | none'),
        click.option('--or-features', default='identity', show_default=True,
                     help='identity | square | sine | bspline[:knots] | none'),
        click.option('--alpha', type=float, default=lambda: config['ALPHA'], show_default='ALPHA'),
        click.option('--resamples', type=int, default=lambda: config['RESAMPLES'], show_default='RESAMPLES'),
        click.option('--seed', type=int, default=lambda: config['SEED'], show_default='SEED'),
        click.option('--min-obs', type=int, default=1, show_default=True,
                     help='Exclude subjects with fewer observations'),
        click.option('--out', required=True, type=click.Path(dir_okay=False), help='Output JSON path'),
        click.option('--drop-zero', is_flag=True, help='Drop observations equal to 0'),
        click.option('--per-arm', is_flag=True, help='Fit the outcome model separately per arm'),
        click.option('--ridge', default='0', show_default=True, help="Nuisance ridge penalty or 'cv'"),
        click.option('--epsilon', type=float, default=lambda: config['CLIP_EPSILON'], show_default='CLIP_EPSILON',
                     help='Propensity clipping'),
        click.option('--id-column', default='subject_id', show_default=True),
        click.option('--value-column', default='value', show_default=True),
        click.option('--quantile-input', is_flag=True, help='Input holds q_1..q_M columns per subject'),
    ]

    def decorator(command):
        for option in reversed(options):
            command = option(command)
        return command
    return decorator


def _parse_ridge(raw: str):
    if raw.strip().lower() == 'cv':
        return 'cv'
    try:
        ridge = float(raw)
    except ValueError:
        raise UsageError(f"--ridge must be a number or 'cv', got {raw!r}")
    if ridge < 0:
        raise UsageError('--ridge must be nonnegative')
    return ridge


def run_estimate(app, flags: Dict[str, Any]):
    """Shared pipeline: load data, estimate, infer"""
    timings = {}
    started = time.perf_counter()

    result = validate_estimate_flags(flags['estimator'], flags['folds'], flags['repeats'],
                                     flags['alpha'], flags['resamples'], flags['grid'])
    if not result['valid']:
        raise UsageError('; '.join(result['errors']))
    kind, argument = parse_reference(flags['reference'])
    bounds = parse_bounds(flags['bounds'])
    grid = LevelGrid(flags['grid'])
    ridge = _parse_ridge(flags['ridge'])
    K = flags['folds'] or DEFAULT_FOLDS
    R = flags['repeats'] or DEFAULT_REPEATS
    if flags['estimator'] in ('cf', 'cfmed') and K < 2:
        raise UsageError('--folds must be at least 2 for cross-fitting')

    dataset = parse_dataset(
        flags['data'], flags['treatment'], parse_list(flags['covariates']), bounds, grid,
        id_column=flags['id_column'], value_column=flags['value_column'], min_obs=flags['min_obs'],
        drop_zero=flags['drop_zero'], quantile_input=flags['quantile_input'],
    )
    external = read_reference_curve(argument, grid, bounds) if kind == 'file' else None
    timings['load'] = time.perf_counter() - started

    nuisance_config = NuisanceConfig.from_settings(
        app.config,
        ps_features=flags['ps_features'],
        or_features=flags['or_features'],
        epsilon=flags['epsilon'],
        or_ridge=ridge,
        ps_ridge=ridge,
        per_arm=flags['per_arm'],
    )
    mark = time.perf_counter()
    estimate, nuisances = run_estimator(dataset.subjects, flags['estimator'], nuisance_config,
                                        K, R, flags['reference'], flags['seed'])
    timings['estimate'] = time.perf_counter() - mark

    reference_curve = resolve_reference(flags['reference'], dataset.subjects, estimate, external, grid)
    effect_map = render_effect_map(estimate, reference_curve)

    band, tests, intervals = None, None, {}
    mark = time.perf_counter()
    if flags['estimator'] in BAND_ESTIMATORS:
        kernel = estimate_kernel(estimate)
        band = scb(estimate, kernel, flags['alpha'], flags['resamples'], flags['seed'])
        tests = {
            'zero_band': test_null_zero_band(band).value,
            'norm': norm_test(estimate, kernel, flags['resamples'], flags['alpha'], flags['seed']).to_dict(),
        }
        intervals['w2'] = w2_interval(estimate, kernel, flags['alpha']).to_dict()
        intervals['mean_shift'] = mean_shift_interval(estimate, kernel, flags['alpha']).to_dict()
    elif flags['estimator'] == 'or' and nuisances.outcome.xtx_inv is not None:
        intervals['treatment_pointwise'] = treatment_interval(nuisances.outcome, flags['alpha']).to_dict()
    timings['inference'] = time.perf_counter() - mark

    seeds = {'seed': flags['seed']}
    if flags['estimator'] in ('cf', 'cfmed'):
        seeds['fold_plan'] = flags['seed']
    document = ResultDocument(
        config={key: value for key, value in sorted(flags.items())},
        grid=grid.M,
        levels=grid.levels.tolist(),
        effect=estimate.effect.tolist(),
        mu1_raw=estimate.mu1_raw.values.tolist(),
        mu0_raw=estimate.mu0_raw.values.tolist(),
        mu1=estimate.mu1.values.tolist(),
        mu0=estimate.mu0.values.tolist(),
        reference=flags['reference'],
        estimator=estimate.estimator,
        n=estimate.n,
        w2_effect=effect_w2_norm(estimate),
        seeds=seeds,
        band=band.to_dict() if band is not None else None,
        tests=tests,
        intervals=intervals or None,
        timings=timings,
    )
    return document, dataset, estimate, effect_map, band


def _effect_frame(grid: LevelGrid, effect_map: np.ndarray, band) -> pd.DataFrame:
    return pd.DataFrame({
        'level': grid.levels,
        't': effect_map[:, 0],
        'effect': effect_map[:, 1],
        'lower': band.lower if band is not None else np.nan,
        'upper': band.upper if band is not None else np.nan,
    })


def register_estimate_commands(cli, app):

    @cli.command('estimate')
    @estimate_options(app)
    @handle_errors(app)
    def estimate_command(**flags):
        """Estimate the causal effect map and write a result document"""
        document, dataset, estimate, effect_map, band = run_estimate(app, flags)
        store = ResultStore(flags['out'])
        store.write_document(document)
        store.write_csv(store.companion_path('csv'), _effect_frame(estimate.grid, effect_map, band))

        click.echo(f"{document.estimator}: n={document.n} W2 effect size={document.w2_effect:.6g}")
        if document.tests:
            click.echo(f"zero-band test: {document.tests['zero_band']}; "
                       f"norm test p={document.tests['norm']['p_value']:.4g}")
        click.echo(f"Wrote {flags['out']}")

    @cli.command('counterfactual')
    @estimate_options(app)
    @click.option('--subject', 'subject_id', required=True, help='Subject id to move to the other arm')
    @handle_errors(app)
    def counterfactual_command(subject_id, **flags):
        """Estimate the effect map and apply it to one subject"""
        flags['subject'] = subject_id
        document, dataset, estimate, effect_map, band = run_estimate(app, flags)
        subject = dataset.subject(subject_id)
        transport = individual_transport(subject, estimate)
        document.counterfactual = {
            'subject': subject.id,
            'treatment': subject.treatment,
            'observed': transport.observed.values.tolist(),
            'counterfactual': transport.counterfactual.values.tolist(),
            'transport': transport.pairs.tolist(),
            'mean_shift': transport.mean_shift,
            'clamped': transport.clamped,
        }

        store = ResultStore(flags['out'])
        store.write_document(document)
        store.write_csv(store.companion_path('csv'), pd.DataFrame({
            'level': estimate.grid.levels,
            'observed': transport.observed.values,
            'counterfactual': transport.counterfactual.values,
            'effect': estimate.effect,
        }))

        click.echo(f"subject {subject.id} (arm {subject.treatment}): implied mean shift {transport.mean_shift:.6g}"
                   + (' [clamped to bounds]' if transport.clamped else ''))
        click.echo(f"Wrote {flags['out']}")

    return cli
