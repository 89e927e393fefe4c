"""
Service layer initialization
"""

from .transport import (
    barycentre, cdf_eval, curve_mean, empirical_quantile, isotonic_project, pushforward_compose,
    quantile_at, transport_map, w2_distance
)
from .nuisance import (
    FeatureMap, NuisanceConfig, fit_nuisances, fit_outcome, fit_propensity, predict_outcome,
    predict_propensity, select_propensity_ridge_cv, select_ridge_cv
)
from .effects import (
    aggregate_median, counterfactual_subject, effect_w2_norm, estimate_cf, estimate_cf_median,
    estimate_dr, estimate_ipw, estimate_or, individual_transport, population_transport_map,
    render_effect_map, resolve_reference, run_estimator
)
from .inference import (
    cf_median_covariance, covariance_kernel, estimate_kernel, gp_supnorm_samples, influence_curves,
    mean_shift_interval, norm_test, scb, treatment_interval, w2_interval
)
from .simulation import coverage_experiment, dgp_sample, load_sim_config, run_mc, true_effect
from .fixtures import fixture_nhanes_like
from .dataset import parse_dataset

__all__ = [
    'barycentre',
    'cdf_eval',
    'curve_mean',
    'empirical_quantile',
    'isotonic_project',
    'pushforward_compose',
    'quantile_at',
    'transport_map',
    'w2_distance',
    'FeatureMap',
    'NuisanceConfig',
    'fit_nuisances',
    'fit_outcome',
    'fit_propensity',
    'predict_outcome',
    'predict_propensity',
    'select_propensity_ridge_cv',
    'select_ridge_cv',
    'aggregate_median',
    'counterfactual_subject',
    'effect_w2_norm',
    'estimate_cf',
    'estimate_cf_median',
    'estimate_dr',
    'estimate_ipw',
    'estimate_or',
    'individual_transport',
    'population_transport_map',
    'render_effect_map',
    'resolve_reference',
    'run_estimator',
    'cf_median_covariance',
    'covariance_kernel',
    'estimate_kernel',
    'gp_supnorm_samples',
    'influence_curves',
    'mean_shift_interval',
    'norm_test',
    'scb',
    'treatment_interval',
    'w2_interval',
    'coverage_experiment',
    'dgp_sample',
    'load_sim_config',
    'run_mc',
    'true_effect',
    'fixture_nhanes_like',
    'parse_dataset',
]
