"""Tests for the fast acceptance checks behind `hessfit verify`."""
from bench.verify import (
    CheckResult, _guarded, check_determinism, check_newton_quadratic_ratio, check_numerics, check_oracles,
    check_spd_rate, check_strong_convexity,
)


def test_oracle_check_passes():
    result = check_oracles()
    assert result.passed, result.detail


def test_spd_rate_check_passes():
    result = check_spd_rate()
    assert result.passed, result.detail


def test_newton_ratio_check_passes():
    result = check_newton_quadratic_ratio([0])
    assert result.passed, result.detail


def test_strong_convexity_check_passes():
    result = check_strong_convexity([0])
    assert result.passed, result.detail


def test_numerics_check_passes():
    result = check_numerics([0])
    assert result.passed, result.detail


def test_determinism_check_passes():
    result = check_determinism([0])
    assert result.passed, result.detail


def test_guarded_turns_errors_into_failures():
    def boom():
        raise RuntimeError("no curve")

    result = _guarded('boom', boom)
    assert result == CheckResult('boom', False, 'raised RuntimeError: no curve')
