"""
Command-line front end.

    python -m regmva {fit,loss-vs-k,tev-vs-k,cef-vs-sr,stall-check} [options]

Exit codes: 0 success, 1 a fit or row failed, 2 configuration or input error.
"""

import argparse
import logging
import sys
from pathlib import Path

from regmva import harness
from regmva.dataset import DATA_DIR_ENV
from regmva.errors import ConfigError, DatasetError, MvaError
from regmva.iterate import InitScheme, derive_seed
from regmva.regularizers import Penalty, PenaltyKind

STALL_TOL = 1e-8

CONFIG_FLAGS = (
    'data', 'target', 'standardize', 'variant', 'strategy', 'k', 'seeds', 'root_seed',
    'penalty', 'sr', 'gamma', 'sr_tolerance', 'max_iter', 'tol', 'omega_jitter', 'out',
    'workers', 'gnuplot',
)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value file; CLI flags override it')
    common.add_argument('--data', help=f'CSV file (default ${DATA_DIR_ENV}/segment.csv)')
    common.add_argument('--target', help='class column (default: class)')
    common.add_argument('--standardize', action='store_true', default=None,
                        help='scale inputs to unit variance after centering')
    common.add_argument('--variant', help='comma list of pca, cca, opls')
    common.add_argument('--strategy', help='comma list of procrustes, eigen')
    common.add_argument('--k', help="number of features, 'a' or 'a..b'")
    common.add_argument('--seeds', type=int, help='random initializations per cell (default 50)')
    common.add_argument('--root-seed', type=int, help='root of the per-run seeds')
    common.add_argument('--penalty', help='none, ridge, l1 or l21')
    common.add_argument('--sr', help='comma list of target sparsity rates in [0, 0.8]')
    common.add_argument('--gamma', help='comma list of γ values (replaces SR calibration)')
    common.add_argument('--sr-tolerance', type=float)
    common.add_argument('--max-iter', type=int)
    common.add_argument('--tol', type=float)
    common.add_argument('--omega-jitter', type=float, help='absolute jitter on C_YY for CCA')
    common.add_argument('--out', help='output directory (default results)')
    common.add_argument('--workers', type=int, help='thread pool size')
    common.add_argument('--gnuplot', action='store_true', default=None,
                        help='also write whitespace-delimited .dat aggregates')
    common.add_argument('-v', '--verbose', action='count', default=0)

    parser = argparse.ArgumentParser(
        prog='regmva',
        description='Regularized PCA / CCA / OPLS with Procrustes and eigenvalue W-steps.',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    fit = sub.add_parser('fit', parents=[common], help='fit one model and print its metrics')
    fit.add_argument('--method', default='Eigen', help='ClosedForm, Procrustes or Eigen')
    fit.add_argument('--init', default='random', help='random, orthogonal or ideal')
    fit.add_argument('--seed', type=int, help='seed of the random start (default: run 0 of --root-seed)')

    sub.add_parser('loss-vs-k', parents=[common], help='objective value against k')
    sub.add_parser('tev-vs-k', parents=[common], help='total explained variance against k')
    sub.add_parser('cef-vs-sr', parents=[common], help='feature correlation against sparsity rate')

    stall = sub.add_parser('stall-check', parents=[common],
                           help='one Procrustes step from orthogonal starts')
    stall.add_argument('--trials', type=int, default=harness.DEFAULT_STALL_TRIALS)
    return parser


def _banner(title):
    print(f"{'='*70}")
    print(title)
    print(f"{'='*70}")


def _print_config(config):
    print(f"Data: {config.data_path} (target '{config.target}', "
          f"{'standardized' if config.standardize else 'centered only'})")
    print(f"Variants: {', '.join(config.variants)}   Strategies: {', '.join(config.strategies)}")
    print(f"Seeds: {config.seeds} (root {config.root_seed})   Workers: {config.workers}")


def _parse_method(text):
    for method in ('ClosedForm', 'Procrustes', 'Eigen'):
        if str(text).strip().lower() == method.lower():
            return method
    raise ConfigError(f"unknown method {text!r} (expected ClosedForm, Procrustes or Eigen)")


def run_fit(config, args):
    d = harness.load_experiment_data(config)
    variant = config.variants[0]
    k = config.k[0] if config.k else 1
    method = _parse_method(args.method)
    gamma = config.gammas[0] if config.gammas else 0.0
    penalty = Penalty(PenaltyKind(config.penalty), gamma) if gamma > 0 else Penalty.none()
    try:
        seed = args.seed if args.seed is not None else derive_seed(config.root_seed, 0)
        init = InitScheme(args.init, seed) if args.init == 'random' else InitScheme(args.init)
    except ValueError as e:
        raise ConfigError(str(e))

    _banner(f"FIT: {method} {variant.upper()} k={k}")
    _print_config(config)
    model, row = harness.fit_one(config, d, variant, k, method, penalty, init)
    print(f"Penalty: {penalty.kind.value} (γ={penalty.gamma:g})   Init: {init} (seed {init.seed})")
    print(f"\nLoss: {row.loss:.12g}")
    print(f"TEV: {', '.join(f'{v:.6g}' for v in row.tev)}")
    print(f"CEF: {row.cef:.6g}")
    print(f"SR: {row.sr:.3f}")
    print(f"Eigenvalues: {', '.join(f'{v:.6g}' for v in model.eigenvalues)}")
    status = '✓ Converged' if model.converged else '⚠️  Not converged'
    print(f"{status} after {model.iterations} iteration(s)")
    for flag in sorted(model.flags):
        print(f"⚠️  {flag}")

    report = harness.ExperimentReport(name='fit', rows=[row])
    paths = harness.emit_csv(report, Path(config.out) / 'fit.csv', config.gnuplot)
    print(f"\nRow written to: {paths[0]}")
    return 0


def _run_sweep(runner, title):
    def command(config, args):
        _banner(title)
        _print_config(config)
        report = runner(config)
        paths = harness.emit_csv(report, Path(config.out) / f"{report.name}.csv", config.gnuplot)
        failed = report.failed
        print(f"\n{len(report.rows)} row(s), {len(failed)} failed")
        for row in failed[:10]:
            print(f"✗ {row.method} {row.variant} k={row.k} seed={row.seed}: {row.error}")
        print(f"\n{'='*70}")
        print("✓ SWEEP COMPLETE!" if not failed else "⚠️  SWEEP COMPLETE WITH ERRORS")
        print(f"{'='*70}")
        for path in paths:
            print(f"Written: {path}")
        return 1 if failed else 0
    return command


def run_stall(config, args):
    _banner("STALL CHECK: one Procrustes step from orthogonal V⁽⁰⁾")
    _print_config(config)
    frame = harness.run_stall_check(config, trials=args.trials)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / 'stall_check.csv'
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')

    failed = False
    for variant, group in frame.groupby('variant', sort=False):
        errors = group[group['error'] != '']
        worst = group['distance'].max()
        if len(errors):
            failed = True
            print(f"✗ {variant}: {errors['error'].iloc[0]}")
        elif worst <= STALL_TOL:
            print(f"✓ {variant}: max ‖V⁽¹⁾ − V⁽⁰⁾‖_F = {worst:.3e} over {len(group)} start(s)")
        else:
            print(f"⚠️  {variant}: max ‖V⁽¹⁾ − V⁽⁰⁾‖_F = {worst:.3e} exceeds {STALL_TOL:g}")
    print(f"\nWritten: {path}")
    return 1 if failed else 0


COMMANDS = {
    'fit': run_fit,
    'loss-vs-k': _run_sweep(harness.run_loss_vs_k, "LOSS VS K"),
    'tev-vs-k': _run_sweep(harness.run_tev_vs_k, "TEV VS K"),
    'cef-vs-sr': _run_sweep(harness.run_cef_vs_sr, "CEF VS SR"),
    'stall-check': run_stall,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        file_values = harness.read_config_file(args.config) if args.config else {}
        config = harness.build_config(file_values, {f: getattr(args, f) for f in CONFIG_FLAGS})
        return COMMANDS[args.command](config, args)
    except (ConfigError, DatasetError) as e:
        print(f"✗ Configuration error: {e}", file=sys.stderr)
        return 2
    except MvaError as e:
        print(f"✗ {e}", file=sys.stderr)
        return 1

