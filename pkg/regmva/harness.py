"""
Experiment orchestration: sweeps over variants × k × methods × seeds (× SR
grid), CSV reports and mean ± std aggregates over seeds.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from regmva import dataset as ds
from regmva.core import Method, MvaVariant, Variant, fit_closed_form, prepare_problem, trace_objective
from regmva.errors import ConfigError, MvaError
from regmva.iterate import DEFAULT_MAX_ITER, DEFAULT_TOL, InitScheme, derive_seed, fit_iterative, stall_check
from regmva.metrics import CSV_HEADER, EXTRA_COLUMNS, failed_row, metric_row
from regmva.regularizers import Penalty, PenaltyKind, gamma_for_sparsity
from regmva.wstep import WStepStrategy

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_SEEDS = 50
DEFAULT_SR_GRID = tuple(round(0.1 * i, 1) for i in range(9))
MAX_SR = 0.8
DEFAULT_SR_TOLERANCE = 0.01
DEFAULT_OUT = 'results'
DEFAULT_STALL_TRIALS = 20
AGG_METRICS = ('loss', 'tev', 'cef', 'sr', 'iterations')


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = None
    target: str = 'class'
    standardize: bool = False
    variants: tuple = ('pca', 'cca', 'opls')
    strategies: tuple = ('Procrustes', 'Eigen')
    k: tuple = None
    seeds: int = DEFAULT_SEEDS
    root_seed: int = 0
    penalty: str = 'l1'
    sr_grid: tuple = DEFAULT_SR_GRID
    gammas: tuple = None
    sr_tolerance: float = DEFAULT_SR_TOLERANCE
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    omega_jitter: float = None
    out: str = DEFAULT_OUT
    workers: int = 1
    gnuplot: bool = False

    def __post_init__(self):
        errors = []
        try:
            object.__setattr__(self, 'variants', tuple(str(MvaVariant.parse(v)) for v in self.variants))
            object.__setattr__(self, 'strategies', tuple(WStepStrategy.parse(s).value for s in self.strategies))
            object.__setattr__(self, 'penalty', PenaltyKind(str(self.penalty).lower()).value)
        except ValueError as e:
            errors.append(str(e))
        if not self.variants:
            errors.append("at least one variant is required")
        if self.seeds < 1:
            errors.append(f"seeds must be ≥ 1, got {self.seeds}")
        if self.workers < 1:
            errors.append(f"workers must be ≥ 1, got {self.workers}")
        if self.root_seed < 0:
            errors.append(f"root-seed must be non-negative, got {self.root_seed}")
        if self.k is not None:
            a, b = self.k
            if not 1 <= a <= b:
                errors.append(f"k range must satisfy 1 ≤ a ≤ b, got {a}..{b}")
        bad_sr = [s for s in self.sr_grid if not 0.0 <= s <= MAX_SR]
        if bad_sr or not self.sr_grid:
            errors.append(f"SR grid must be a non-empty subset of [0, {MAX_SR}], got {list(self.sr_grid)}")
        if self.gammas is not None and any(not g >= 0 for g in self.gammas):
            errors.append(f"gammas must be non-negative, got {list(self.gammas)}")
        if self.max_iter < 1 or not self.tol > 0:
            errors.append("max-iter must be ≥ 1 and tol > 0")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def data_path(self):
        return Path(self.data) if self.data else ds.data_dir() / 'segment.csv'

    def k_range(self, max_k, default=None):
        """Inclusive k values, checked against min(n, m) of the problem."""
        a, b = self.k or default or (1, max_k)
        if b > max_k:
            raise ConfigError(f"k range {a}..{b} exceeds min(n, m) = {max_k}")
        return range(a, b + 1)

    def run_seeds(self):
        return [derive_seed(self.root_seed, i) for i in range(self.seeds)]


# =============================================================================
# CONFIG PARSING
# =============================================================================
def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(p.strip() for p in str(text).split(',') if p.strip())


def _parse_floats(text):
    return tuple(float(p) for p in _parse_list(text))


def parse_k_range(text):
    """'3' → (3, 3); '1..6' → (1, 6)."""
    if isinstance(text, tuple):
        return text
    parts = str(text).split('..')
    if len(parts) == 1:
        return int(parts[0]), int(parts[0])
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ValueError(f"k range must be 'a' or 'a..b', got {text!r}")


_CONVERTERS = {
    'data': str,
    'target': str,
    'standardize': _parse_bool,
    'variants': _parse_list,
    'strategies': _parse_list,
    'k': parse_k_range,
    'seeds': int,
    'root_seed': int,
    'penalty': str,
    'sr_grid': _parse_floats,
    'gammas': _parse_floats,
    'sr_tolerance': float,
    'max_iter': int,
    'tol': float,
    'omega_jitter': float,
    'out': str,
    'workers': int,
    'gnuplot': _parse_bool,
}
# Flag names that differ from field names
_ALIASES = {'variant': 'variants', 'strategy': 'strategies', 'sr': 'sr_grid', 'gamma': 'gammas'}


def _normalize_key(key):
    key = key.strip().lstrip('-').replace('-', '_')
    return _ALIASES.get(key, key)


def read_config_file(path):
    """key=value lines; '#' starts a comment. Keys are long flag names."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split('=', 1)
        values[_normalize_key(key)] = value.strip()
    return values


def build_config(file_values=None, cli_values=None):
    """ExperimentConfig from defaults < config file < CLI values (None means unset)."""
    merged = {}
    for source in (file_values or {}, cli_values or {}):
        for key, value in source.items():
            key = _normalize_key(key)
            if value is None:
                continue
            if key not in _CONVERTERS:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                merged[key] = _CONVERTERS[key](value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key}: {e}")
    return ExperimentConfig(**merged)


# =============================================================================
# REPORTS
# =============================================================================
@dataclass
class ExperimentReport:
    name: str
    rows: list = field(default_factory=list)
    group_by: tuple = ('method', 'init', 'variant', 'k')

    @property
    def failed(self):
        return [r for r in self.rows if r.failed]

    @property
    def aggregates(self):
        return aggregate(self.rows, self.group_by)


def rows_frame(rows):
    columns = list(CSV_HEADER + EXTRA_COLUMNS)
    return pd.DataFrame([r.as_record() for r in rows], columns=columns)


def aggregate(rows, group_by):
    """Mean and population std (ddof=0) of every metric over seeds, per group."""
    group_by = list(group_by)
    metrics = [m for m in AGG_METRICS if m not in group_by]
    columns = group_by + ["n"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    frame = rows_frame([r for r in rows if not r.failed])
    if frame.empty:
        return pd.DataFrame(columns=columns)
    frame[metrics] = frame[metrics].astype(float)
    grouped = frame.groupby(group_by, sort=True)
    agg = grouped[metrics].agg(['mean', lambda s: s.std(ddof=0)])
    agg.columns = [f"{m}_{'mean' if s == 'mean' else 'std'}" for m, s in agg.columns]
    agg.insert(0, 'n', grouped.size())
    return agg.reset_index()[columns]


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


def emit_csv(report, path, gnuplot=False):
    """Write the row CSV and the `_agg.csv` aggregates; returns the paths written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = CSV_HEADER + EXTRA_COLUMNS
    rows = sorted(report.rows, key=lambda r: r.sort_key())
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            record = row.as_record()
            writer.writerow([_fmt(record[c]) for c in columns])

    agg = report.aggregates
    agg_path = path.with_name(f"{path.stem}_agg.csv")
    agg.to_csv(agg_path, index=False, float_format='%.17g', lineterminator='\n')
    written = [path, agg_path]
    if gnuplot:
        dat_path = path.with_name(f"{path.stem}_agg.dat")
        with open(dat_path, 'w', encoding='utf-8') as f:
            f.write('# ' + ' '.join(agg.columns) + '\n')
            agg.replace('', '-').to_csv(f, sep=' ', header=False, index=False, float_format='%.17g',
                                        lineterminator='\n')
        written.append(dat_path)
    logger.info("Wrote %s (%d rows)", path, len(rows))
    return written


# =============================================================================
# JOBS
# =============================================================================
@dataclass(frozen=True)
class FitJob:
    variant: str
    method: Method
    k: int
    seed: int = 0
    init: InitScheme = None
    penalty: Penalty = None
    sr: float = None


def load_experiment_data(config):
    table = ds.load_csv(config.data_path, config.target)
    return ds.center_and_standardize(table, config.standardize)


def _report_loss(problem, model):
    # CCA is reported in its maximization form
    if problem.variant.tag is Variant.CCA:
        return trace_objective(problem, problem.variant, model.V)
    return problem.objective_v(model.U, model.V, model.penalty)


def _run_job(problems, config, job):
    problem = problems[job.variant]
    try:
        if job.method is Method.CLOSED_FORM:
            model = fit_closed_form(problem, problem.variant, job.k, 0.0)
        else:
            model = fit_iterative(
                problem, problem.variant, job.k, job.penalty, WStepStrategy(job.method.value),
                job.init, config.max_iter, config.tol,
            )
        return metric_row(model, problem.cxx, _report_loss(problem, model), seed=job.seed,
                          sr_target=job.sr, standardize=config.standardize)
    except (MvaError, ArithmeticError, np.linalg.LinAlgError) as e:
        logger.error("%s %s k=%d seed=%d failed: %s", job.method.value, job.variant, job.k, job.seed, e)
        return failed_row(job.method.value, job.variant, job.k, e, seed=job.seed,
                          sr=job.sr or 0.0,
                          init=job.init or "", standardize=config.standardize)


def _map(config, fn, items):
    if config.workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(fn, items))


def _problems(config, d):
    return {v: prepare_problem(d, MvaVariant.parse(v, config.omega_jitter)) for v in config.variants}


def _k_sweep(config, name, d=None):
    d = d if d is not None else load_experiment_data(config)
    problems = _problems(config, d)
    seeds = config.run_seeds()
    jobs = []
    for variant, problem in problems.items():
        for k in config.k_range(problem.max_k):
            jobs.append(FitJob(variant, Method.CLOSED_FORM, k))
            for strategy in config.strategies:
                for seed in seeds:
                    jobs.append(FitJob(variant, Method(strategy), k, seed, InitScheme.random(seed)))
    logger.info("%s: %d fits over %d variant(s)", name, len(jobs), len(problems))
    rows = _map(config, lambda job: _run_job(problems, config, job), jobs)
    return ExperimentReport(name=name, rows=sorted(rows, key=lambda r: r.sort_key()))


def run_loss_vs_k(config, d=None):
    """Unregularized loss per variant, k, method and seed (CCA as the trace objective)."""
    return _k_sweep(config, 'loss_vs_k', d)


def run_tev_vs_k(config, d=None):
    """Unregularized TEV(k) per variant, k, method and seed."""
    return _k_sweep(config, 'tev_vs_k', d)


def _sr_methods(config, seeds):
    """(method, init) pairs: Procrustes from random/orthogonal/ideal starts, Eigen from random."""
    pairs = []
    for strategy in config.strategies:
        method = Method(strategy)
        pairs.extend((method, InitScheme.random(s), s) for s in seeds)
        if method is Method.PROCRUSTES:
            pairs.append((method, InitScheme.orthogonal(), 0))
            pairs.append((method, InitScheme.ideal(), 0))
    return pairs


def run_cef_vs_sr(config, d=None):
    """
    CEF over the SR grid with an ℓ1 (or ℓ2,1) penalty. γ is calibrated once per
    (variant, k, SR) with the Eigen strategy and shared by every method and seed.
    With config.gammas set the grid is taken as γ values instead.
    """
    kind = PenaltyKind(config.penalty)
    if kind not in (PenaltyKind.L1, PenaltyKind.L21):
        raise ConfigError(f"cef-vs-sr needs a sparsity penalty (l1 or l21), got {kind.value}")
    d = d if d is not None else load_experiment_data(config)
    problems = _problems(config, d)
    seeds = config.run_seeds()
    gamma_mode = config.gammas is not None

    cells = [
        (variant, k, point)
        for variant, problem in problems.items()
        for k in config.k_range(problem.max_k, default=(problem.max_k, problem.max_k))
        for point in (config.gammas if gamma_mode else config.sr_grid)
    ]

    def calibrate(cell):
        variant, k, point = cell
        if gamma_mode:
            return cell, point, None
        if point == 0.0:
            # the SR = 0 point is the unregularized fit
            return cell, 0.0, None
        problem = problems[variant]

        def fit(penalty):
            return fit_iterative(problem, problem.variant, k, penalty, WStepStrategy.EIGEN,
                                 InitScheme(), config.max_iter, config.tol)
        try:
            result = gamma_for_sparsity(problem.dataset, problem.variant, k, kind, point,
                                        config.sr_tolerance, fit=fit)
            logger.info("%s k=%d SR=%.2f: γ=%.6g (SR %.3f)", variant, k, point, result.gamma, result.sparsity)
            return cell, result.gamma, None
        except (MvaError, ArithmeticError, np.linalg.LinAlgError) as e:
            return cell, None, e

    rows = []
    jobs = []
    for (variant, k, point), gamma, error in _map(config, calibrate, cells):
        sr = None if gamma_mode else point
        for method, init, seed in _sr_methods(config, seeds):
            if error is not None:
                rows.append(failed_row(method.value, variant, k, f"γ calibration: {error}", seed=seed,
                                       sr=sr or 0.0, init=init,
                                       standardize=config.standardize))
                continue
            jobs.append(FitJob(variant, method, k, seed, init, Penalty(kind, gamma), sr))
    logger.info("cef_vs_sr: %d fits over %d cell(s)", len(jobs), len(cells))
    rows.extend(_map(config, lambda job: _run_job(problems, config, job), jobs))
    group = ('method', 'init', 'variant', 'k', 'gamma' if gamma_mode else 'sr')
    return ExperimentReport(name='cef_vs_sr', rows=sorted(rows, key=lambda r: r.sort_key()), group_by=group)


# =============================================================================
# SINGLE FITS AND STALL CHECK
# =============================================================================
def fit_one(config, d, variant, k, method, penalty=None, init=None):
    """One fit with its MetricRow; errors propagate."""
    problem = prepare_problem(d, MvaVariant.parse(variant, config.omega_jitter))
    method = Method(method)
    if method is Method.CLOSED_FORM:
        gamma = penalty.gamma if penalty is not None and penalty.kind is PenaltyKind.RIDGE else 0.0
        model = fit_closed_form(problem, problem.variant, k, gamma)
    else:
        model = fit_iterative(problem, problem.variant, k, penalty, WStepStrategy(method.value),
                              init, config.max_iter, config.tol)
    seed = init.seed if init is not None else 0
    row = metric_row(model, problem.cxx, _report_loss(problem, model), seed=seed,
                     standardize=config.standardize)
    return model, row


def random_orthogonal(m, seed):
    """Q factor of an m×m Gaussian matrix, with R's diagonal made positive."""
    A = np.random.default_rng(seed).standard_normal((m, m))
    Q, R = np.linalg.qr(A)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def run_stall_check(config, d=None, trials=DEFAULT_STALL_TRIALS):
    """
    ‖V⁽¹⁾ − V⁽⁰⁾‖_F of one Procrustes step from V⁽⁰⁾ = I and `trials` random
    orthogonal matrices, per variant. Returns a DataFrame.
    """
    d = d if d is not None else load_experiment_data(config)
    records = []
    for variant, problem in _problems(config, d).items():
        starts = [('identity', np.eye(problem.m))]
        starts += [(f"random-{i}", random_orthogonal(problem.m, derive_seed(config.root_seed, i)))
                   for i in range(trials)]
        for label, V0 in starts:
            try:
                distance, error = stall_check(problem, problem.variant, V0), ""
            except MvaError as e:
                distance, error = math.nan, str(e)
            records.append({'variant': variant, 'start': label, 'distance': distance, 'error': error})
    return pd.DataFrame(records, columns=['variant', 'start', 'distance', 'error'])

