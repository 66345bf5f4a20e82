import numpy as np
import pandas as pd
import pytest

from regmva import harness, linalg
from regmva.core import prepare_problem
from regmva.errors import ConfigError
from regmva.harness import ExperimentConfig, ExperimentReport, build_config, emit_csv
from regmva.metrics import CSV_HEADER, EXTRA_COLUMNS
from regmva.regularizers import Penalty

SWEEP = dict(variants=('opls',), k=(1, 3), seeds=3, max_iter=2000, tol=1e-10)


@pytest.fixture(scope='module')
def loss_report(segment_like):
    return harness.run_loss_vs_k(ExperimentConfig(**SWEEP), d=segment_like)


# =============================================================================
# CONFIGURATION
# =============================================================================
def test_default_config_is_valid():
    config = ExperimentConfig()
    assert config.variants == ('pca', 'cca', 'opls')
    assert config.strategies == ('Procrustes', 'Eigen')
    assert config.seeds == 50
    assert config.sr_grid == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    assert config.data_path.name == 'segment.csv'


@pytest.mark.parametrize('kwargs, message', [
    (dict(seeds=0), "seeds must be"),
    (dict(variants=('pls',)), "unknown variant"),
    (dict(strategies=('power',)), "unknown W-step strategy"),
    (dict(sr_grid=(0.0, 0.9)), "SR grid"),
    (dict(k=(3, 2)), "k range"),
    (dict(gammas=(-1.0,)), "gammas"),
    (dict(workers=0), "workers"),
])
def test_config_validation(kwargs, message):
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig(**kwargs)


def test_config_precedence(tmp_path):
    path = tmp_path / 'exp.conf'
    path.write_text("# sweep\nseeds = 5\nvariant = opls, cca\nk = 2..3\nstandardize = yes  # scaled\n")
    file_values = harness.read_config_file(path)
    config = build_config(file_values, {'seeds': 2, 'variant': None, 'root_seed': 7})
    assert config.seeds == 2
    assert config.variants == ('opls', 'cca')
    assert config.k == (2, 3)
    assert config.standardize is True
    assert config.root_seed == 7


def test_config_rejects_unknown_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="unknown configuration key 'colour'"):
        build_config({'colour': 'red'})
    with pytest.raises(ConfigError, match="bad value for seeds"):
        build_config({'seeds': 'many'})
    with pytest.raises(ConfigError, match="not found"):
        harness.read_config_file(tmp_path / 'missing.conf')
    bad = tmp_path / 'bad.conf'
    bad.write_text("seeds 5\n")
    with pytest.raises(ConfigError, match="expected key=value"):
        harness.read_config_file(bad)


def test_k_range():
    assert harness.parse_k_range('3') == (3, 3)
    assert harness.parse_k_range('1..6') == (1, 6)
    with pytest.raises(ValueError):
        harness.parse_k_range('1..2..3')
    assert list(ExperimentConfig().k_range(4)) == [1, 2, 3, 4]
    assert list(ExperimentConfig().k_range(4, default=(4, 4))) == [4]
    with pytest.raises(ConfigError, match="exceeds"):
        ExperimentConfig(k=(1, 5)).k_range(4)


def test_run_seeds_are_derived():
    seeds = ExperimentConfig(seeds=4, root_seed=3).run_seeds()
    assert len(set(seeds)) == 4
    assert seeds == ExperimentConfig(seeds=4, root_seed=3).run_seeds()
    assert seeds != ExperimentConfig(seeds=4, root_seed=4).run_seeds()


# =============================================================================
# LOSS AND TEV SWEEPS
# =============================================================================
def test_loss_vs_k_rows(loss_report):
    rows = loss_report.rows
    # per k: one closed-form row plus 2 strategies × 3 seeds
    assert len(rows) == 3 * (1 + 2 * 3)
    assert not loss_report.failed
    assert sum(r.method == 'ClosedForm' for r in rows) == 3
    assert {r.init for r in rows if r.method != 'ClosedForm'} == {'random'}


def test_eigen_loss_matches_closed_form(loss_report):
    closed = {r.k: r.loss for r in loss_report.rows if r.method == 'ClosedForm'}
    for row in loss_report.rows:
        if row.method == 'Eigen':
            assert row.loss == pytest.approx(closed[row.k], rel=1e-8)
        elif row.method == 'Procrustes':
            assert row.loss >= closed[row.k] * (1 - 1e-8)


def test_aggregates_recompute(loss_report):
    agg = loss_report.aggregates
    assert list(agg.columns[:5]) == ['method', 'init', 'variant', 'k', 'n']
    eigen = agg[(agg['method'] == 'Eigen') & (agg['k'] == 2)].iloc[0]
    losses = np.array([r.loss for r in loss_report.rows if r.method == 'Eigen' and r.k == 2])
    assert eigen['n'] == 3
    assert eigen['loss_mean'] == pytest.approx(losses.mean())
    assert eigen['loss_std'] == pytest.approx(losses.std(ddof=0), abs=1e-12)


def test_single_seed_has_zero_std(segment_like):
    config = ExperimentConfig(variants=('opls',), k=(2, 2), seeds=1)
    agg = harness.run_loss_vs_k(config, d=segment_like).aggregates
    assert (agg['n'] == 1).all()
    assert (agg['loss_std'] == 0.0).all()


@pytest.mark.parametrize('variant', ['pca', 'cca', 'opls'])
def test_tev_ordering(segment_like, variant):
    config = ExperimentConfig(**dict(SWEEP, variants=(variant,), max_iter=5000))
    report = harness.run_tev_vs_k(config, d=segment_like)
    assert not report.failed
    agg = report.aggregates.set_index(['method', 'k'])
    for k in (1, 2, 3):
        eigen = agg.loc[('Eigen', k)]
        procrustes = agg.loc[('Procrustes', k)]
        assert eigen['tev_mean'] >= procrustes['tev_mean'] * (1 - 1e-8)
        assert eigen['tev_std'] <= 1e-6 * eigen['tev_mean']
    closed = agg.loc[('ClosedForm', 1)]
    first = next(r for r in report.rows if r.method == 'ClosedForm' and r.k == 1)
    assert closed['tev_mean'] == pytest.approx(first.tev[0])


def test_singular_inputs_become_error_rows(make_dataset):
    d, _ = make_dataset(duplicate_feature=True)
    config = ExperimentConfig(variants=('opls',), k=(1, 1), seeds=1)
    report = harness.run_loss_vs_k(config, d=d)
    assert len(report.rows) == 3
    assert len(report.failed) == 3
    assert all("singular" in r.error for r in report.rows)
    assert report.aggregates.empty


def test_non_finite_fits_become_error_rows(segment_like, monkeypatch):
    def broken(*args, **kwargs):
        return linalg.thin_svd(np.full((3, 2), np.nan))

    monkeypatch.setattr(harness, 'fit_iterative', broken)
    config = ExperimentConfig(variants=('opls',), k=(1, 1), seeds=1)
    report = harness.run_loss_vs_k(config, d=segment_like)
    assert len(report.rows) == 3
    assert {r.method for r in report.failed} == {'Procrustes', 'Eigen'}
    assert all("non-finite" in r.error for r in report.failed)


def test_sweep_from_csv(classification_csv):
    path = classification_csv()
    config = ExperimentConfig(data=str(path), variants=('pca',), k=(1, 1), seeds=1)
    report = harness.run_loss_vs_k(config)
    assert len(report.rows) == 3
    assert not report.failed


# =============================================================================
# CEF VS SR
# =============================================================================
def test_cef_at_zero_sparsity(segment_like):
    config = ExperimentConfig(variants=('opls',), k=(2, 2), seeds=2, sr_grid=(0.0,),
                              max_iter=5000, tol=1e-12)
    report = harness.run_cef_vs_sr(config, d=segment_like)
    assert not report.failed
    # Procrustes: 2 random + orthogonal + ideal; Eigen: 2 random
    assert len(report.rows) == 6
    for row in report.rows:
        assert row.gamma == 0.0 and row.sr == 0.0
        if row.method == 'Eigen' or row.init == 'ideal':
            assert row.cef <= 1e-6
        elif row.init == 'random':
            assert row.cef > 1e-3
    assert report.group_by[-1] == 'sr'


def test_cef_with_explicit_gammas(segment_like):
    config = ExperimentConfig(variants=('opls',), k=(2, 2), seeds=1, gammas=(0.0, 50.0),
                              strategies=('Eigen',))
    report = harness.run_cef_vs_sr(config, d=segment_like)
    assert sorted({r.gamma for r in report.rows}) == [0.0, 50.0]
    assert report.group_by[-1] == 'gamma'
    assert set(report.aggregates['gamma']) == {0.0, 50.0}


def test_cef_needs_a_sparsity_penalty(segment_like):
    with pytest.raises(ConfigError, match="sparsity penalty"):
        harness.run_cef_vs_sr(ExperimentConfig(penalty='ridge'), d=segment_like)


# =============================================================================
# OUTPUT
# =============================================================================
def test_emit_csv(loss_report, tmp_path):
    paths = emit_csv(loss_report, tmp_path / 'loss_vs_k.csv')
    assert [p.name for p in paths] == ['loss_vs_k.csv', 'loss_vs_k_agg.csv']
    lines = paths[0].read_text().splitlines()
    assert lines[0] == ','.join(CSV_HEADER + EXTRA_COLUMNS)
    assert len(lines) == 1 + len(loss_report.rows)

    frame = pd.read_csv(paths[0], float_precision='round_trip', keep_default_na=False)
    expected = sorted(loss_report.rows, key=lambda r: r.sort_key())
    assert list(frame['loss']) == [r.loss for r in expected]
    assert list(frame['tev']) == [r.tev_final for r in expected]
    assert set(frame['converged']) <= {True, False}

    agg = pd.read_csv(paths[1])
    assert len(agg) == len(loss_report.aggregates)


def test_emit_csv_empty_report(tmp_path):
    paths = emit_csv(ExperimentReport(name='empty'), tmp_path / 'empty.csv')
    assert paths[0].read_text() == ','.join(CSV_HEADER + EXTRA_COLUMNS) + '\n'
    assert paths[1].read_text().startswith('method,init,variant,k,n,loss_mean')


def test_emit_csv_is_deterministic(segment_like, tmp_path):
    serial = dict(variants=('opls', 'cca'), k=(1, 2), seeds=2)
    a = harness.run_loss_vs_k(ExperimentConfig(workers=1, **serial), d=segment_like)
    b = harness.run_loss_vs_k(ExperimentConfig(workers=2, **serial), d=segment_like)
    pa = emit_csv(a, tmp_path / 'a' / 'out.csv')
    pb = emit_csv(b, tmp_path / 'b' / 'out.csv')
    for x, y in zip(pa, pb):
        assert x.read_bytes() == y.read_bytes()


def test_gnuplot_output(loss_report, tmp_path):
    paths = emit_csv(loss_report, tmp_path / 'loss.csv', gnuplot=True)
    assert paths[-1].name == 'loss_agg.dat'
    lines = paths[-1].read_text().splitlines()
    assert lines[0].startswith('# method init variant k n loss_mean')
    closed = [line for line in lines[1:] if line.startswith('ClosedForm')]
    assert closed and all(line.split()[1] == '-' for line in closed)


# =============================================================================
# SINGLE FITS AND STALL CHECK
# =============================================================================
def test_fit_one(segment_like):
    model, row = harness.fit_one(ExperimentConfig(), segment_like, 'opls', 2, 'ClosedForm',
                                 Penalty.ridge(3.0))
    assert model.gamma == 3.0
    assert row.method == 'ClosedForm' and row.gamma == 3.0
    assert row.loss == pytest.approx(
        prepare_problem(segment_like, 'opls').objective_v(model.U, model.V, model.penalty))


def test_random_orthogonal():
    Q = harness.random_orthogonal(5, 42)
    np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)
    assert np.array_equal(Q, harness.random_orthogonal(5, 42))


def test_stall_check_frame(segment_like):
    config = ExperimentConfig(variants=('opls', 'pca'))
    frame = harness.run_stall_check(config, d=segment_like, trials=3)
    assert list(frame.columns) == ['variant', 'start', 'distance', 'error']
    assert len(frame) == 2 * 4
    assert (frame['distance'] < 1e-8).all()
    assert (frame['error'] == '').all()
    assert frame['start'].iloc[0] == 'identity'
