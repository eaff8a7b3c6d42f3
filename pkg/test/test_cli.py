"""Tests for the hessfit command line."""
import csv
import json

import pytest

import hessfit


@pytest.fixture
def cli_env(hessfit_env, clean_logging):
    return hessfit_env


def test_list_prints_registered_pairs(cli_env, capsys):
    assert hessfit.main(['list']) == 0
    out = capsys.readouterr().out
    assert 'fig1' in out and 'newton' in out and 'fig4' in out


def test_run_writes_curve_and_summary(cli_env):
    out = cli_env / 'curves' / 'fig1_gl.csv'
    code = hessfit.main(['run', '--scenario', 'fig1', '--method', 'gl', '--iters', '20',
                         '--seeds', '2', '--out', str(out)])
    assert code == 0
    with open(out, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['scenario', 'method', 'seed', 'iter', 'metric', 'wall_ns']
    assert len(rows) == 1 + 2 * 21
    assert {row[2] for row in rows[1:]} == {'0', '1'}
    summary = json.loads((cli_env / 'curves' / 'fig1_gl_summary.json').read_text())
    assert [run['seed'] for run in summary['runs']] == [0, 1]


def test_run_default_output_path(cli_env):
    assert hessfit.main(['run', '--scenario', 'custom', '--method', 'diag', '--iters', '5',
                         '--extra', 'hessian=hilbert3']) == 0
    assert (cli_env / 'results' / 'custom_diag.csv').exists()


def test_run_all_methods(cli_env):
    out = cli_env / 'all.csv'
    assert hessfit.main(['run', '--scenario', 'fig1', '--method', 'all', '--iters', '5',
                         '--out', str(out)]) == 0
    with open(out, newline='') as f:
        methods = {row[1] for row in list(csv.reader(f))[1:]}
    assert methods == {'euclid', 'closed', 'riccati', 'spd', 'gl', 'tri', 'newton'}


@pytest.mark.parametrize("argv", [
    ['run', '--scenario', 'fig9', '--method', 'gl'],
    ['run', '--scenario', 'fig1', '--method', 'qep'],
    ['run', '--scenario', 'fig1', '--method', 'gl', '--iters', '0'],
    ['run', '--scenario', 'fig1', '--method', 'gl', '--extra', 'hessian'],
    ['run', '--scenario', 'fig1', '--method', 'gl', '--seeds', '0'],
])
def test_run_rejects_bad_arguments(cli_env, capsys, argv):
    assert hessfit.main(argv) == 2
    assert capsys.readouterr().out.startswith('Error:')


def test_bad_settings_exit_code(cli_env, monkeypatch):
    monkeypatch.setenv('HESSFIT_LOG_LEVEL', 'loud')
    assert hessfit.main(['list']) == 2


def test_missing_command_exits():
    with pytest.raises(SystemExit):
        hessfit.parse_arguments([])


def test_parse_extra():
    assert hessfit.parse_extra(['rank=5', ' hessian = hilbert3 ']) == {'rank': '5', 'hessian': 'hilbert3'}
