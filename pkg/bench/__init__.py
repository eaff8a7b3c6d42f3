"""
Benchmark scenarios, runner, curve logging and the acceptance suite.
"""

from .scenarios import SCENARIOS, ScenarioConfig, ScenarioSpec, make_hessian, ground_truth
from .runner import CurvePoint, RunResult, run_scenario, run_scenario_result, run_many
from .stats import fit_loglog_slope, fit_loglinear, first_hit
from .data_logger import CurveLogger, write_csv

__all__ = [
    'SCENARIOS', 'ScenarioConfig', 'ScenarioSpec', 'make_hessian', 'ground_truth',
    'CurvePoint', 'RunResult', 'run_scenario', 'run_scenario_result', 'run_many',
    'fit_loglog_slope', 'fit_loglinear', 'first_hit', 'CurveLogger', 'write_csv',
]
