import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from regmva import core, linalg
from regmva.core import MvaVariant, Variant
from regmva.errors import ShapeError
from regmva.metrics import cef
from regmva.regularizers import Penalty

VARIANTS = ['pca', 'cca', 'opls']


@pytest.mark.parametrize('variant', VARIANTS)
def test_closed_form_features_are_uncorrelated(segment_like, variant):
    problem = core.prepare_problem(segment_like, variant)
    model = core.fit_closed_form(problem, variant, problem.max_k)
    gram = model.U.T @ problem.cxx @ model.U
    scale = np.linalg.norm(model.eigenvalues)
    assert linalg.offdiag_norm(gram) <= 1e-6 * scale
    assert_allclose(np.diag(gram), model.eigenvalues, atol=1e-6 * scale)


def test_pca_recovers_covariance_eigenvectors(segment_like):
    model = core.fit_closed_form(segment_like, 'pca', 3)
    eig = linalg.sym_eig(segment_like.X @ segment_like.X.T)
    assert_allclose(model.eigenvalues, eig.eigenvalues[:3], rtol=1e-10)
    assert_allclose(model.U, model.V, atol=1e-8)
    assert linalg.projector_distance(model.V, eig.eigenvectors[:, :3]) < 1e-8


def test_opls_against_generalized_eigensolver(segment_like):
    problem = core.prepare_problem(segment_like, 'opls')
    model = core.fit_closed_form(problem, 'opls', 3)
    lam = la.eigh(problem.cxy @ problem.cxy.T, problem.cxx, eigvals_only=True)[::-1]
    assert_allclose(model.eigenvalues, lam[:3], rtol=1e-8)
    assert_allclose(model.W, model.V)


def test_cca_against_generalized_eigensolver(segment_like):
    problem = core.prepare_problem(segment_like, 'cca')
    model = core.fit_closed_form(problem, 'cca', 3)
    A = problem.cxy @ problem.omega @ problem.cxy.T
    lam = la.eigh(0.5 * (A + A.T), problem.cxx, eigvals_only=True)[::-1]
    assert_allclose(model.eigenvalues, lam[:3], rtol=1e-8)
    # squared canonical correlations
    assert np.all(model.eigenvalues <= 1.0 + 1e-8)
    assert_allclose(problem.omega_half @ model.W, model.V, atol=1e-8)


def test_cca_jitter_default_and_override(segment_like):
    problem = core.prepare_problem(segment_like, 'cca')
    expected = core.DEFAULT_OMEGA_JITTER * np.trace(problem.cyy) / problem.m
    assert problem.jitter == pytest.approx(expected)
    custom = core.prepare_problem(segment_like, MvaVariant.parse('cca', omega_jitter=1e-3))
    assert custom.jitter == 1e-3


@pytest.mark.parametrize('variant', ['pca', 'opls'])
def test_objective_at_closed_form(segment_like, variant):
    problem = core.prepare_problem(segment_like, variant)
    model = core.fit_closed_form(problem, variant, 2)
    loss = core.objective(problem, variant, model.U, model.W)
    assert loss == pytest.approx(problem.trace_yoy - model.eigenvalues.sum(), rel=1e-9)
    assert loss == pytest.approx(problem.objective_v(model.U, model.V), rel=1e-12)
    assert core.trace_objective(problem, variant, model.V) == pytest.approx(model.eigenvalues.sum(), rel=1e-10)


def test_objective_matches_brute_force(segment_like, rng):
    problem = core.prepare_problem(segment_like, 'cca')
    U = rng.normal(size=(problem.n, 2))
    W = rng.normal(size=(problem.m, 2))
    d = problem.dataset
    residual = d.Y - W @ (U.T @ d.X)
    expected = float(np.trace(residual.T @ problem.omega @ residual))
    penalty = Penalty.l1(0.5)
    loss = core.objective(problem, 'cca', U, W, penalty)
    assert loss == pytest.approx(expected + 0.5 * np.abs(U).sum(), rel=1e-8)


def test_closed_form_is_the_trace_maximizer(segment_like, rng):
    problem = core.prepare_problem(segment_like, 'opls')
    best = core.trace_objective(problem, 'opls', core.fit_closed_form(problem, 'opls', 2).V)
    for _ in range(200):
        V, _ = np.linalg.qr(rng.normal(size=(problem.m, 2)))
        assert core.trace_objective(problem, 'opls', V) <= best + 1e-9


def test_ridge_closed_form(segment_like):
    problem = core.prepare_problem(segment_like, 'opls')
    model = core.fit_closed_form(problem, 'opls', 2, gamma=5.0)
    expected = np.linalg.solve(problem.cxx + 5.0 * np.eye(problem.n), problem.B @ model.V)
    assert_allclose(model.U, expected, rtol=1e-9, atol=1e-12)
    assert model.penalty.kind.value == 'ridge'


def test_k_beyond_rank_is_flagged(segment_like, caplog):
    # centered one-hot outputs: rank m − 1
    with caplog.at_level('WARNING'):
        model = core.fit_closed_form(segment_like, 'opls', segment_like.m)
    assert 'beyond_rank' in model.flags
    assert model.eigenvalues[-1] == pytest.approx(0.0, abs=1e-8 * model.eigenvalues[0])
    assert "exceeds the rank" in caplog.text


@pytest.mark.parametrize('k', [0, 5, 2.0])
def test_invalid_k(segment_like, k):
    with pytest.raises(ShapeError):
        core.fit_closed_form(segment_like, 'opls', k)


def test_objective_shape_check(segment_like):
    with pytest.raises(ShapeError):
        core.objective(segment_like, 'opls', np.zeros((3, 2)), np.zeros((4, 2)))


def test_variant_parsing():
    assert MvaVariant.parse(' CCA ').tag is Variant.CCA
    assert str(MvaVariant.parse('opls')) == 'opls'
    with pytest.raises(ValueError, match="unknown variant"):
        MvaVariant.parse('pls')
    with pytest.raises(ValueError):
        MvaVariant(Variant.CCA, omega_jitter=-1.0)


def test_uncorrelation_residual_is_cef(segment_like, rng):
    U = rng.normal(size=(segment_like.n, 3))
    cxx = segment_like.X @ segment_like.X.T
    assert core.uncorrelation_residual(U, cxx) == cef(U, cxx)
