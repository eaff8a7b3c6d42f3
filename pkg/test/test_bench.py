"""Tests for scenarios, the runner, curve statistics and the CSV writer."""
import csv
import json
import math

import numpy as np
import pytest

from bench.data_logger import CSV_HEADER, format_metric, summarize, write_csv
from bench.runner import (
    DIVERGENCE_FLOOR, CurvePoint, CurveRecorder, RunResult, direction_stream, run_many, run_scenario,
    run_scenario_result, should_log,
)
from bench.scenarios import (
    SCENARIOS, ScenarioConfig, TimeVaryingHessian, fitting_distance, fitting_error, ground_truth, list_registered,
    make_hessian, tridiagonal, whitening_condition,
)
from bench.stats import first_hit, fit_loglinear, fit_loglog_slope, min_metric, step_ratios
from helpers.rng import SeededRng
from numerics.errors import ScenarioError

SMALL_TRD = {'R': '2', 'I': '3', 'J': '4', 'K': '5', 'theta_lr': '0.05'}


def _points(metrics, start=1):
    return [CurvePoint(iter=start + i, metric=m) for i, m in enumerate(metrics)]


def test_make_hessian_kinds():
    assert make_hessian('hilbert3')[2, 2] == pytest.approx(0.2)
    H = make_hessian('tridiag50')
    assert H.shape == (50, 50)
    assert H[0, 1] == 0.5 and H[0, 2] == 0.0 and H[10, 10] == 1.0
    assert make_hessian('hilb64reg')[0, 0] == pytest.approx(1.0 + 1e-6)
    assert isinstance(make_hessian('timevarying', SeededRng(0), 4), TimeVaryingHessian)
    with pytest.raises(ScenarioError):
        make_hessian('wishart')


def test_time_varying_hessian_grows():
    stream = TimeVaryingHessian(4, SeededRng(1))
    np.testing.assert_array_equal(stream.current, np.full((4, 4), 0.25))
    before = stream.current.copy()
    after = stream.advance()
    assert stream.t == 1
    np.testing.assert_allclose(after, after.T)
    assert np.all(after >= before)


def test_ground_truth_and_metrics():
    np.testing.assert_allclose(ground_truth(np.diag([3.0, -2.0]), 0.0), np.diag([3.0, 2.0]), atol=1e-14)
    np.testing.assert_allclose(ground_truth(np.diag([3.0]), 4.0), [[5.0]])
    assert fitting_error(np.eye(4), np.eye(4)) == 0.0
    assert fitting_error(2.0 * np.eye(4), np.eye(4)) == pytest.approx(1.0)
    assert whitening_condition(np.eye(2), np.diag([1.0, 4.0])) == pytest.approx(4.0)
    assert whitening_condition(np.eye(2), np.diag([1.0, -1.0])) == math.inf
    np.testing.assert_array_equal(tridiagonal(3), [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])


def test_fitting_distance():
    assert fitting_distance(np.diag([0.5, 0.25]), np.diag([2.0, 4.0])) == pytest.approx(0.0, abs=1e-15)
    assert fitting_distance(np.eye(2), 2.0 * np.eye(2)) == pytest.approx(math.sqrt(0.5))
    # an indefinite P is measured, not rejected
    assert fitting_distance(np.diag([1.0, -1.0]), np.eye(2)) == pytest.approx(2.0)


def test_scenario_config_defaults():
    cfg = ScenarioConfig('fig1', 'riccati').validate()
    assert cfg.iters == 2000
    assert cfg.n == 3
    assert cfg.sigma_eps == 0.0
    cfg = ScenarioConfig('fig2b', 'gl').validate()
    assert (cfg.n, cfg.iters, cfg.sigma_eps, cfg.mu, cfg.beta) == (50, 50000, 0.01, 0.1, 0.0)
    cfg = ScenarioConfig('custom', 'diag', extra={'hessian': 'hilbert3'}).validate()
    assert cfg.n == 3


@pytest.mark.parametrize("kwargs", [
    {'scenario': 'fig9', 'method': 'gl'},
    {'scenario': 'fig1', 'method': 'qep'},
    {'scenario': 'fig1', 'method': 'gl', 'iters': 0},
    {'scenario': 'fig1', 'method': 'gl', 'beta': 2.0},
    {'scenario': 'fig1', 'method': 'gl', 'mu': 0.0},
    {'scenario': 'fig1', 'method': 'gl', 'sigma_eps': -1.0},
    {'scenario': 'fig1', 'method': 'gl', 'seed': -1},
    {'scenario': 'custom', 'method': 'gl', 'extra': {'hessian': 'wishart'}},
    {'scenario': 'fig1', 'method': 'euclid', 'extra': {'metric': 'kappa'}},
    {'scenario': 'fig1', 'method': 'closed', 'extra': {'draws': 'sobol'}},
    {'scenario': 'fig1', 'method': 'closed', 'extra': {'p0': '-1'}},
    {'scenario': 'fig1', 'method': 'closed', 'extra': {'p0': 'large'}},
    {'scenario': 'fig3', 'method': 'qep', 'extra': {'metric': 'dist'}},
    {'scenario': 'fig4', 'method': 'lra', 'extra': {'draws': 'orthogonal'}},
])
def test_scenario_config_rejects(kwargs):
    with pytest.raises(ScenarioError):
        ScenarioConfig(**kwargs).validate()


def test_scenario_config_options_and_extras():
    cfg = ScenarioConfig('fig4', 'lra', extra={'rank': '5', 'theta_lr': 'fast'})
    assert cfg.options()['rank'] == 5
    assert ScenarioConfig('fig4', 'lra').options() == {'rank': 10, 'grad_clip': 1.0}
    with pytest.raises(ScenarioError):
        cfg.extra_float('theta_lr', 0.2)
    assert cfg.extra_int('R', 10) == 10


def test_list_registered_covers_every_scenario():
    pairs = {(scenario, method) for scenario, method, _, _ in list_registered()}
    assert ('fig1', 'newton') in pairs
    assert ('fig4', 'gd') in pairs
    assert {scenario for scenario, _ in pairs} == set(SCENARIOS)
    assert ('custom', 'newton') not in pairs


def test_should_log_schedule():
    assert should_log(999, 5000)
    assert not should_log(1001, 5000)
    assert should_log(1010, 5000)
    assert should_log(1503, 1503)


def test_logging_schedule_point_count():
    """Test one point per iteration below 1000 and every 10th afterwards."""
    cfg = ScenarioConfig('custom', 'diag', iters=1500, extra={'hessian': 'hilbert3'})
    points = run_scenario(cfg)
    assert len(points) == 1051
    assert points[0].iter == 0 and points[-1].iter == 1500
    assert [p.iter for p in points[999:1003]] == [999, 1000, 1010, 1020]


def test_newton_scenario_converges():
    points = run_scenario(ScenarioConfig('fig1', 'newton', iters=30))
    assert points[-1].iter == 30
    assert points[-1].metric < 1e-12
    assert not any(p.diverged for p in points)


def test_fig1_run_is_deterministic():
    cfg = ScenarioConfig('fig1', 'gl', iters=200, seed=7)
    first = run_scenario(cfg)
    second = run_scenario(cfg)
    assert [(p.iter, p.metric) for p in first] == [(p.iter, p.metric) for p in second]
    assert all(p.wall_ns == 0 for p in first)
    assert first[-1].metric < first[0].metric


def test_different_seeds_give_different_curves():
    a = run_scenario(ScenarioConfig('fig1', 'gl', iters=50, seed=0))
    b = run_scenario(ScenarioConfig('fig1', 'gl', iters=50, seed=1))
    assert a[-1].metric != b[-1].metric


def test_timing_records_wall_clock():
    points = run_scenario(ScenarioConfig('fig1', 'gl', iters=20, timing=True))
    assert points[-1].wall_ns > 0


@pytest.mark.parametrize("scenario,method,overrides", [
    ('fig2b', 'tri', {'n': 8}),
    ('fig2c', 'gl', {'n': 6}),
    ('fig2a', 'bfgs', {'n': 10}),
    ('fig1', 'closed', {}),
])
def test_small_fit_scenarios_stay_finite(scenario, method, overrides):
    result = run_scenario_result(ScenarioConfig(scenario, method, iters=100, **overrides))
    assert len(result.points) == 101
    assert all(math.isfinite(p.metric) for p in result.points)
    assert 'skipped' in result.notes


def test_whitening_scenario_logs_condition_every_hundred():
    points = run_scenario(ScenarioConfig('fig3', 'qep', iters=250, n=16))
    assert [p.iter for p in points] == [0, 100, 200, 250]
    assert all(p.metric >= 1.0 for p in points)


@pytest.mark.parametrize("method", ['diag', 'kron', 'lra', 'quad1'])
def test_small_tensor_decomposition_runs(method):
    result = run_scenario_result(ScenarioConfig('fig4', method, iters=30, extra=SMALL_TRD))
    assert result.points[0].iter == 0 and result.points[-1].iter == 30
    assert len(result.points) == 31
    assert all(math.isfinite(p.metric) for p in result.points)
    assert result.notes['init_scale'] > 0.0


def test_gd_keeps_best_grid_curve():
    result = run_scenario_result(ScenarioConfig('fig4', 'gd', iters=30, extra=SMALL_TRD))
    assert result.notes['L0'] > 0.0
    assert math.isfinite(result.final_metric)
    fixed = run_scenario_result(ScenarioConfig('fig4', 'gd', iters=30, mu=1e-4, extra=SMALL_TRD))
    assert fixed.notes['lr'] == 1e-4


def test_curve_recorder_divergence_rule():
    recorder = CurveRecorder(timing=False)
    assert not recorder.add(0, 1.0).diverged
    assert not recorder.add(1, 0.5).diverged
    assert recorder.add(2, 20.0).diverged
    assert recorder.add(3, math.nan).diverged
    assert recorder.fail(4).metric == math.inf


def test_curve_recorder_rising_start_is_not_divergence():
    """Test that a metric above 10x the minimum but below its start is not flagged."""
    recorder = CurveRecorder(timing=False)
    recorder.add(0, 100.0)
    recorder.add(1, 1.0)
    assert not recorder.add(2, 50.0).diverged


def test_curve_recorder_floor_flags_rebound_below_start():
    """Test that with a floor a rebound is flagged even when it stays under the first metric."""
    recorder = CurveRecorder(timing=False, floor=DIVERGENCE_FLOOR)
    recorder.add(0, 0.5)
    recorder.add(1, 0.01)
    assert not recorder.add(2, 0.09).diverged
    assert recorder.add(3, 0.2).diverged


def test_curve_recorder_floor_ignores_noise_at_machine_precision():
    recorder = CurveRecorder(timing=False, floor=DIVERGENCE_FLOOR)
    recorder.add(0, 1.0)
    recorder.add(1, 1e-12)
    assert not recorder.add(2, 5e-8).diverged
    assert recorder.add(3, 2e-7).diverged


def test_direction_stream_orthogonal_blocks():
    n = 4
    directions = direction_stream(SeededRng(3), n, 'orthogonal')
    for _ in range(3):
        block = np.array([next(directions) for _ in range(n)])
        np.testing.assert_allclose(block.T @ block, n * np.eye(n), atol=1e-10)
    gaussian = direction_stream(SeededRng(3), n)
    assert next(gaussian).shape == (n,)
    np.testing.assert_array_equal(next(direction_stream(SeededRng(3), n)), SeededRng(3).standard_normal(n))


def test_hilbert_spd_keeps_a_valid_curve():
    result = run_scenario_result(ScenarioConfig('fig1', 'spd', iters=200))
    assert len(result.points) == 201
    assert all(math.isfinite(p.metric) for p in result.points)
    assert not result.diverged


def test_hilbert_closed_form_distance_decays_as_one_over_t():
    result = run_scenario_result(ScenarioConfig('fig1', 'closed', iters=2000, extra={'metric': 'dist'}))
    assert not result.diverged
    assert fit_loglog_slope(result.points, span=(100, 2000)) == pytest.approx(-1.0, abs=0.2)


def test_hilbert_euclid_distance_decreases():
    result = run_scenario_result(ScenarioConfig('fig1', 'euclid', iters=2000, extra={'metric': 'dist'}))
    assert all(math.isfinite(p.metric) for p in result.points)
    assert not result.diverged
    assert result.final_metric < result.points[0].metric


def test_small_tridiagonal_gl_converges():
    result = run_scenario_result(ScenarioConfig('fig2a', 'gl', n=8, iters=2000))
    assert not result.diverged
    assert result.final_metric < 0.1 * result.points[0].metric


def test_qep_whitening_improves_condition():
    result = run_scenario_result(ScenarioConfig('fig3', 'qep', iters=3000, n=16))
    assert not result.diverged
    assert all(math.isfinite(p.metric) for p in result.points)
    assert result.final_metric < 0.1 * result.points[0].metric


def test_full_size_lra_stays_finite():
    result = run_scenario_result(ScenarioConfig('fig4', 'lra', iters=50))
    assert len(result.points) == 51
    assert all(math.isfinite(p.metric) for p in result.points)
    assert not result.diverged


def test_run_many_preserves_order():
    configs = [ScenarioConfig('fig1', 'gl', iters=10, seed=seed) for seed in range(3)]
    seen = []
    results = run_many(configs, workers=1, on_result=seen.append)
    assert [r.config.seed for r in results] == [0, 1, 2]
    assert seen == results


def test_write_csv_is_byte_stable(tmp_path):
    cfg = ScenarioConfig('fig1', 'tri', iters=50, seed=3)
    result = run_scenario_result(cfg)
    first = tmp_path / 'a.csv'
    second = tmp_path / 'b.csv'
    write_csv(str(first), [result])
    write_csv(str(second), [run_scenario_result(cfg)], summary=False)
    assert first.read_bytes() == second.read_bytes()

    with open(first, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + len(result.points)
    assert rows[1][:4] == ['fig1', 'tri', '3', '0']
    assert all(row[5] == '0' for row in rows[1:])
    assert float(rows[-1][4]) == result.final_metric

    summary = json.loads((tmp_path / 'a_summary.json').read_text())
    assert summary['csv'] == 'a.csv'
    assert summary['runs'][0]['points'] == len(result.points)
    assert not (tmp_path / 'b_summary.json').exists()


def test_format_metric_round_trips():
    for value in (1.0 / 3.0, 2.0 ** -0.5, 1e-300, math.inf):
        assert float(format_metric(value)) == value


def test_summarize_reports_slope():
    cfg = ScenarioConfig('fig1', 'gl', iters=1000).validate()
    points = [CurvePoint(iter=t, metric=1.0 / math.sqrt(t)) for t in range(1, 1001)]
    summary = summarize(RunResult(cfg, points, {'skipped': 0}))
    assert summary['loglog_slope'] == pytest.approx(-0.5)
    assert summary['final_metric'] == pytest.approx(1.0 / math.sqrt(1000.0))
    assert summary['diverged'] is False


def test_fit_loglog_slope_examples():
    assert fit_loglog_slope(_points([t ** -0.5 for t in range(1, 101)])) == pytest.approx(-0.5)
    assert fit_loglog_slope(_points([1.0 / t for t in range(1, 101)]), span=(10, 100)) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        fit_loglog_slope(_points([1.0] * 5))
    with pytest.raises(ValueError):
        fit_loglog_slope(_points([1.0] * 9 + [0.0]))


def test_fit_loglinear_example():
    slope, r2 = fit_loglinear(_points([10.0 ** (-0.01 * t) for t in range(50)], start=0))
    assert slope == pytest.approx(-0.01)
    assert r2 == pytest.approx(1.0)


def test_first_hit_and_min():
    points = _points([1.0, math.nan, 0.1, 0.01], start=0)
    assert first_hit(points, 0.1) == 2
    assert first_hit(points, 1e-3) is None
    assert min_metric(points) == 0.01
    np.testing.assert_allclose(step_ratios([1.0, 0.5, 0.0, 0.25]), [0.5, 0.0])
