import sys
import os
import argparse
import logging

from bench.data_logger import CurveLogger
from bench.runner import run_many
from bench.scenarios import SCENARIOS, ScenarioConfig, list_registered
from bench.verify import run_checks
from helpers.config import load_settings
from helpers.logger import setup_logging
from numerics.errors import ConfigError, HessfitError, ScenarioError

logger = logging.getLogger('hessfit')

EPILOG = """examples:
  hessfit list
  hessfit run --scenario fig1 --method gl --iters 20000 --seed 0 --out results/fig1_gl.csv
  hessfit run --scenario fig2b --method all --seeds 5 --workers 4
  hessfit verify --quick
"""


def parse_arguments(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog='hessfit',
        description='Stochastic Hessian fitting benchmarks',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG
        )
    parser.add_argument('--env-file', type=str, default=None,
                        help='Read HESSFIT_* settings from this file (default: ./.env)')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run a scenario and write its convergence CSV')
    run.add_argument('--scenario', type=str, required=True,
                     help=f"Scenario name ({', '.join(SCENARIOS)})")
    run.add_argument('--method', type=str, required=True,
                     help="Fitter name, or 'all' for every method registered for the scenario")
    run.add_argument('--iters', type=int, default=None,
                     help='Iterations (default: scenario protocol)')
    run.add_argument('--seed', type=int, default=None,
                     help='Seed of the first run (default: HESSFIT_SEED or 0)')
    run.add_argument('--seeds', type=int, default=1,
                     help='Number of consecutive seeds to run (default: 1)')
    run.add_argument('--mu', type=float, default=None,
                     help='Fitting step size (default: scenario protocol)')
    run.add_argument('--beta', type=float, default=None,
                     help='Lipschitz tracker smoothing in [0, 1] (default: scenario protocol)')
    run.add_argument('--sigma', type=float, default=None,
                     help='Std of the model noise added to Hessian-vector products')
    run.add_argument('--n', type=int, default=None,
                     help='Dimension override for custom Hessians')
    run.add_argument('--extra', type=str, action='append', default=[],
                     help='Extra key=value option, repeatable (e.g. hessian=hilbert3, rank=5)')
    run.add_argument('--out', type=str, default=None,
                     help='Output CSV (default: <HESSFIT_OUT_DIR>/<scenario>_<method>.csv)')
    run.add_argument('--workers', type=int, default=None,
                     help='Worker processes (default: HESSFIT_WORKERS or 1)')
    run.add_argument('--timing', action='store_true',
                     help='Record wall-clock nanoseconds instead of 0')

    sub.add_parser('list', help='List registered scenario/method pairs')

    verify = sub.add_parser('verify', help='Run the acceptance suite')
    verify.add_argument('--quick', action='store_true',
                        help='One seed, skip the long benchmark reproductions')
    verify.add_argument('--workers', type=int, default=None,
                        help='Worker processes (default: HESSFIT_WORKERS or 1)')
    return parser.parse_args(argv)


def parse_extra(items):
    """Turn ['k=v', ...] into a dict."""
    extra = {}
    for item in items:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--extra expects key=value, got '{item}'")
        extra[key.strip()] = value.strip()
    return extra


def validate_scenario(scenario, method):
    """Validate that the scenario and method are registered."""
    if scenario not in SCENARIOS:
        raise ScenarioError(f"Unsupported scenario '{scenario}'. Supported scenarios: {', '.join(SCENARIOS)}")
    if method != 'all' and method not in SCENARIOS[scenario].methods:
        raise ScenarioError(f"Method '{method}' is not registered for {scenario}. "
                            f"Registered: {', '.join(SCENARIOS[scenario].methods)}")


def build_configs(args, settings):
    validate_scenario(args.scenario, args.method)
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    methods = list(SCENARIOS[args.scenario].methods) if args.method == 'all' else [args.method]
    first_seed = settings.default_seed if args.seed is None else args.seed
    extra = parse_extra(args.extra)
    configs = []
    for method in methods:
        for seed in range(first_seed, first_seed + args.seeds):
            cfg = ScenarioConfig(args.scenario, method, n=args.n, iters=args.iters, seed=seed, mu=args.mu,
                                 beta=args.beta, sigma_eps=args.sigma, extra=extra, timing=args.timing)
            configs.append(cfg.validate())
    return configs


def command_run(args, settings):
    configs = build_configs(args, settings)
    out = args.out or os.path.join(settings.out_dir, f"{args.scenario}_{args.method}.csv")
    workers = args.workers or settings.workers
    logger.info(f"🚀 {len(configs)} run(s) of {args.scenario} on {workers} worker(s) -> {out}")
    with CurveLogger(out, logger=logger, timezone=settings.timezone) as curve_logger:
        results = run_many(configs, workers=workers, on_result=curve_logger.log_curve)
        curve_logger.write_summary()
    diverged = sum(result.diverged for result in results)
    if diverged:
        logger.warning(f"⚠️ {diverged} of {len(results)} run(s) flagged divergence")
    return 0


def command_list():
    print(f"{'scenario':<10} {'method':<10} {'mu':>6} {'beta':>6} {'iters':>7}  description")
    for scenario, method, spec, defaults in list_registered():
        mu = '-' if defaults.mu is None else f"{defaults.mu:g}"
        beta = '-' if defaults.beta is None else f"{defaults.beta:g}"
        iters = defaults.iters or spec.iters
        print(f"{scenario:<10} {method:<10} {mu:>6} {beta:>6} {iters:>7}  {spec.description}")
    return 0


def command_verify(args, settings):
    results = run_checks(quick=args.quick, workers=args.workers or settings.workers)
    failed = 0
    for result in results:
        mark = 'SKIP' if result.skipped else ('PASS' if result.passed else 'FAIL')
        print(f"[{mark}] {result.name}: {result.detail}")
        failed += int(not result.passed)
    return 1 if failed else 0


def main(argv=None):
    """Main entry point of the hessfit command."""
    args = parse_arguments(argv)

    try:
        settings = load_settings(args.env_file)
        setup_logging(settings)
        if args.command == 'list':
            return command_list()
        if args.command == 'verify':
            return command_verify(args, settings)
        return command_run(args, settings)

    except ConfigError as e:
        print(f"Error: {e}")
        return 2
    except HessfitError as e:
        print(f"Error running hessfit: {e}")
        return 1
    except KeyboardInterrupt:
        print("\nhessfit interrupted by user")
        return 1
    except Exception as e:
        print(f"Error running hessfit: {e}")
        import traceback
        print(f"Full traceback: {traceback.format_exc()}")
        return 1


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
