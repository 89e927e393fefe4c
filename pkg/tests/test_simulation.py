import json

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import expit

from wasscause.commands.simulate import bundled_configs, resolve_config_path
from wasscause.models import Band, LevelGrid, SimConfig
from wasscause.services import simulation
from wasscause.services.effects import _build_estimate
from wasscause.services.simulation import (
    aggregate_replicates, build_sim_config, cell_keys, coverage_experiment, dgp_quantile, dgp_sample,
    expected_treatment, load_sim_config, metric_bias_median, metric_rmise, nuisance_config_for, run_mc,
    run_replicate, true_effect
)
from wasscause.utils.errors import ConfigError


def estimate_from_effect(grid, effect):
    return _build_estimate(grid, grid.levels + effect, grid.levels, (-1.0, 2.0), 'uniform', 'dr', 100)


def smoke_config(**overrides):
    values = dict(n=80, replicates=2, k_obs=51, grid=21, estimators=('or', 'ipw', 'dr'), seed=3, workers=1)
    values.update(overrides)
    return SimConfig(**values)


class TestDataGeneration:

    def test_expected_treatment_by_quadrature(self):
        x = np.linspace(-1.0, 1.0, 20_001)
        for scenario, h in (('linear', x), ('sine', np.sin(np.pi * x))):
            assert expected_treatment(scenario) == pytest.approx(trapezoid(expit(1.0 + h), x) / 2.0, abs=1e-8)

    def test_quantile_curves_pin_the_endpoints(self):
        levels = np.array([0.0, 1.0])
        for a in (0, 1):
            np.testing.assert_allclose(dgp_quantile(levels, a, 0.7, -0.4, 0.4), [0.0, 1.0], atol=1e-15)

    def test_potential_curves_are_increasing(self, dgp):
        for curve in dgp.potential1 + dgp.potential0:
            assert np.all(np.diff(curve.values) > 0)

    def test_subject_shapes(self, dgp):
        assert len(dgp.subjects) == 400
        assert dgp.subjects[0].covariates.shape == (1,)
        assert set(np.unique(dgp.A)) == {0, 1}

    def test_same_seed_same_data(self):
        first = dgp_sample(20, 30, seed=4, grid=LevelGrid(11))
        second = dgp_sample(20, 30, seed=4, grid=LevelGrid(11))
        for a, b in zip(first.subjects, second.subjects):
            np.testing.assert_array_equal(a.lifted.values, b.lifted.values)


class TestMetrics:

    def test_true_effect_values(self):
        grid = LevelGrid(201)
        effect = true_effect(grid)
        assert effect[100] == pytest.approx(0.125)
        assert np.sqrt(np.mean(effect ** 2)) == pytest.approx(np.sqrt(1.0 / 128.0), rel=1e-10)

    def test_truth_scores_zero(self):
        grid = LevelGrid(201)
        estimate = estimate_from_effect(grid, true_effect(grid))
        assert metric_bias_median(estimate) == pytest.approx(0.0, abs=1e-15)
        assert metric_rmise(estimate) == pytest.approx(0.0, abs=1e-15)

    def test_zero_estimate(self):
        grid = LevelGrid(201)
        estimate = estimate_from_effect(grid, np.zeros(grid.M))
        assert metric_bias_median(estimate) == pytest.approx(-0.125)
        assert metric_rmise(estimate) == pytest.approx(0.08839, abs=1e-5)

    def test_constant_estimate(self):
        grid = LevelGrid(101)
        estimate = estimate_from_effect(grid, np.full(grid.M, 0.05))
        assert metric_bias_median(estimate) == pytest.approx(-0.075)
        assert metric_rmise(estimate) > 0.0


class TestConfig:

    def test_defaults_fill_missing_fields(self):
        config = build_sim_config({'n': '50', 'replicates': '3'})
        assert (config.n, config.replicates, config.grid, config.scenario) == (50, 3, 201, 'linear')

    def test_lists_and_flags(self):
        config = build_sim_config({'n': '50', 'replicates': '3', 'or_specs': 'correct, square',
                                   'coverage': 'true'})
        assert config.or_specs == ('correct', 'square')
        assert config.coverage is True

    @pytest.mark.parametrize('values, field', [
        ({'replicates': '3'}, 'n'),
        ({'n': '10', 'replicates': 'many'}, 'replicates'),
        ({'n': '10', 'replicates': '3', 'scenario': 'cubic'}, 'scenario'),
        ({'n': '10', 'replicates': '3', 'estimators': 'dr,tmle'}, 'estimators'),
        ({'n': '10', 'replicates': '3', 'alpha': '1.5'}, 'alpha'),
        ({'n': '10', 'replicates': '3', 'colour': 'red'}, 'colour'),
    ])
    def test_invalid_field(self, values, field):
        with pytest.raises(ConfigError) as info:
            build_sim_config(values)
        assert info.value.field == field

    def test_load_from_file(self, tmp_path):
        path = tmp_path / 'study.cfg'
        path.write_text('# small study\nn=40\nreplicates=2\nestimators=dr\n', encoding='utf-8')
        config = load_sim_config(str(path))
        assert config.estimators == ('dr',)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_sim_config(str(tmp_path / 'absent.cfg'))

    def test_cell_layout_matches_the_results_table(self):
        config = SimConfig(n=200, replicates=1, ps_specs=('correct', 'square'), or_specs=('correct', 'square'),
                           estimators=('or', 'ipw', 'dr', 'cfmed'))
        keys = cell_keys(config)
        assert len(keys) == 12
        assert keys[:4] == [('or', '-', 'correct'), ('or', '-', 'square'),
                            ('ipw', 'correct', '-'), ('ipw', 'square', '-')]

    @pytest.mark.parametrize('scenario', ['linear', 'sine'])
    @pytest.mark.parametrize('n', [50, 200, 1000])
    def test_data_adaptive_studies_are_bundled(self, scenario, n):
        name = f"table2-{scenario}-n{n}"
        assert name in bundled_configs()
        config = load_sim_config(resolve_config_path(name))
        assert (config.n, config.scenario) == (n, scenario)
        assert cell_keys(config) == [('dr', 'adaptive', 'adaptive'), ('cfmed', 'adaptive', 'adaptive')]

    def test_specification_mapping(self):
        assert nuisance_config_for('correct', 'square', 'linear').ps_features.kind == 'identity'
        assert nuisance_config_for('correct', 'square', 'linear').or_features.kind == 'square'
        assert nuisance_config_for('correct', 'correct', 'sine').or_features.kind == 'sine'
        adaptive = nuisance_config_for('adaptive', 'adaptive', 'sine')
        assert adaptive.or_features.kind == 'bspline'
        assert adaptive.or_ridge == 'cv'


class TestMonteCarlo:

    def test_replicate_scores_every_cell(self):
        config = smoke_config()
        outcome = run_replicate(config, 0)
        assert set(outcome) == set(cell_keys(config))
        assert all(record['ok'] for record in outcome.values())

    def test_single_replicate_has_no_standard_error(self):
        config = smoke_config(replicates=1)
        result = run_mc(config)
        record = run_replicate(config, 0)[('dr', 'correct', 'correct')]
        cell = result.cell('dr', 'correct', 'correct')
        assert cell.bias == record['bias']
        assert cell.bias_se is None
        assert cell.rmise_se is None

    def test_same_seed_same_result(self):
        config = smoke_config()
        first = json.dumps(run_mc(config).to_dict(), sort_keys=True)
        second = json.dumps(run_mc(config).to_dict(), sort_keys=True)
        assert first == second

    def test_worker_count_does_not_change_result(self):
        config = smoke_config(replicates=3)
        serial = run_mc(config, workers=1).to_dict()
        parallel = run_mc(config, workers=2).to_dict()
        assert serial['cells'] == parallel['cells']

    def test_failures_are_counted(self):
        config = smoke_config(replicates=2)
        failed = {'ok': False, 'error': 'SeparationError: diverged'}
        good = {'ok': True, 'bias': 0.01, 'rmise': 0.02, 'covered': None}
        replicates = [{key: good for key in cell_keys(config)}, {key: failed for key in cell_keys(config)}]
        cell = aggregate_replicates(config, replicates).cell('or', '-', 'correct')
        assert (cell.replicates, cell.failures, cell.bias) == (1, 1, 0.01)

    def test_table_rows_are_scaled(self):
        result = run_mc(smoke_config(replicates=1))
        row = result.table_rows()[0]
        cell = result.cells[0]
        assert row['bias_x100'] == pytest.approx(100.0 * cell.bias)

    def test_coverage_experiment_reports_band_estimators(self):
        config = smoke_config(replicates=2, estimators=('or', 'dr'), resamples=100)
        coverage = coverage_experiment(config)
        assert set(coverage) == {'dr'}
        assert 0.0 <= coverage['dr'] <= 1.0

    def test_huge_band_always_covers(self, monkeypatch):
        monkeypatch.setattr(simulation, 'scb', lambda estimate, kernel, alpha, B, seed: Band.from_center(
            estimate.effect, 1e6, estimate.n, alpha, B))
        coverage = coverage_experiment(smoke_config(replicates=3, estimators=('dr',)))
        assert coverage['dr'] == 1.0

    def test_zero_width_band_never_covers(self, monkeypatch):
        monkeypatch.setattr(simulation, 'scb', lambda estimate, kernel, alpha, B, seed: Band.from_center(
            estimate.effect, 0.0, estimate.n, alpha, B))
        coverage = coverage_experiment(smoke_config(replicates=3, estimators=('dr',)))
        assert coverage['dr'] == 0.0


@pytest.mark.slow
class TestAcceptance:

    @pytest.fixture(scope='class')
    def table(self):
        config = build_sim_config({'n': '200', 'replicates': '500', 'ps_specs': 'correct,square',
                                   'or_specs': 'correct,square', 'estimators': 'or,ipw,dr', 'seed': '2024',
                                   'workers': '8'})
        return run_mc(config)

    def test_double_robustness_pattern(self, table):
        for ps, orr in (('correct', 'correct'), ('correct', 'square'), ('square', 'correct')):
            assert abs(100 * table.cell('dr', ps, orr).bias) <= 0.15
        assert 3.2 <= 100 * table.cell('dr', 'square', 'square').bias <= 4.2
        assert 3.3 <= 100 * table.cell('or', '-', 'square').bias <= 4.3
        assert 3.2 <= 100 * table.cell('ipw', 'square', '-').bias <= 4.2

    def test_efficiency_ordering(self, table):
        outcome = table.cell('or', '-', 'correct').rmise
        doubly_robust = table.cell('dr', 'correct', 'correct').rmise
        weighting = table.cell('ipw', 'correct', '-').rmise
        assert outcome <= doubly_robust <= weighting
        for value, reference in ((outcome, 0.339), (doubly_robust, 0.348), (weighting, 0.981)):
            assert 0.7 * reference <= 100 * value <= 1.3 * reference

    def test_cross_fit_median_is_unbiased(self):
        config = build_sim_config({'n': '200', 'replicates': '500', 'estimators': 'cfmed', 'folds': '5',
                                   'repeats': '20', 'seed': '2024', 'workers': '8'})
        assert abs(100 * run_mc(config).cell('cfmed', 'correct', 'correct').bias) <= 0.15

    def test_band_coverage(self):
        config = build_sim_config({'n': '200', 'replicates': '300', 'estimators': 'dr', 'resamples': '500',
                                   'seed': '11', 'workers': '8'})
        assert 0.87 <= coverage_experiment(config)['dr'] <= 0.95

    def test_adaptive_models_improve_with_sample_size(self):
        base = {'replicates': '100', 'scenario': 'sine', 'ps_specs': 'adaptive', 'or_specs': 'adaptive',
                'estimators': 'dr', 'seed': '7', 'workers': '8'}
        small = run_mc(build_sim_config(dict(base, n='200'))).cell('dr', 'adaptive', 'adaptive')
        large = run_mc(build_sim_config(dict(base, n='1000'))).cell('dr', 'adaptive', 'adaptive')
        assert large.rmise < small.rmise / 2.0
