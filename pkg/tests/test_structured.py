import numpy as np
import pytest

import design
import matrixkit
import pfc_core
import simlab
import structured
from exceptions import InvalidInput

from conftest import random_design


def _diag_design(n=400, seed=3, degree=2, p=4):
    gen = simlab.make_generator('sec8_diagdelta', n=n, p=p, seed=seed)
    data, truth = simlab.generate(gen)
    return data, design.build_design(data, design.BasisSpec.polynomial(degree)), truth


########################################################################################################################
# structures

def test_builders():
    assert structured.DeltaStructure.diagonal(4).m == 4
    assert structured.DeltaStructure.equicorrelated(4).m == 2
    grouped = structured.DeltaStructure.grouped_diagonal(['a', 'b', 'a', 'c'])
    assert grouped.m == 3 and grouped.labels == ('a', 'b', 'c')
    np.testing.assert_array_equal(grouped.compose([1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 1.0, 3.0]))
    assert structured.DeltaStructure.unrestricted(3).m == 6


def test_structure_validation():
    with pytest.raises(InvalidInput):
        structured.DeltaStructure.custom([np.eye(2), 2 * np.eye(2)])
    with pytest.raises(InvalidInput):
        structured.DeltaStructure.custom([[[1.0, 1.0], [0.0, 1.0]]])
    with pytest.raises(InvalidInput):
        structured.DeltaStructure.custom(np.ones((2, 2, 3)))


def test_project_compose():
    s = structured.DeltaStructure.equicorrelated(3)
    M = 2 * np.eye(3) + 0.5 * np.ones((3, 3))
    np.testing.assert_allclose(s.project(M), [2.0, 0.5], atol=1e-12)
    assert s.closure_residual(M) < 1e-12
    assert s.closure_residual(np.diag([1.0, 2.0, 3.0])) > 0.1


def test_parse_structure(tmp_path):
    assert structured.parse_structure('diag', 3).kind == 'diagonal'
    assert structured.parse_structure('equicorr', 3).kind == 'equicorrelated'
    assert structured.parse_structure('groups=a,a,b', 3).m == 2
    with pytest.raises(InvalidInput):
        structured.parse_structure('groups=a,b', 3)
    with pytest.raises(InvalidInput):
        structured.parse_structure('toeplitz', 3)
    path = tmp_path / 'g.txt'
    path.write_text('1 0\n0 1\n0 1\n1 0\n')
    s = structured.parse_structure(f'custom={path}', 2)
    assert s.kind == 'custom' and s.m == 2
    np.testing.assert_array_equal(s.basis[1], [[0, 1], [1, 0]])


def test_load_structure_file_shape(tmp_path):
    path = tmp_path / 'g.txt'
    path.write_text('1 0 0\n0 1 0\n')
    with pytest.raises(InvalidInput):
        structured.load_structure_file(str(path), 3)


########################################################################################################################
# fit_structured

def test_r_equal_d_is_one_shot(rng):
    dm = random_design(rng, n=80, p=4, r=1)
    s = structured.DeltaStructure.diagonal(4)
    fit = structured.fit_structured(dm, 1, s)
    assert fit.iterations == 0 and fit.converged
    np.testing.assert_allclose(fit.delta_tilde, np.diag(np.diag(dm.SigmaRes)), atol=1e-14)
    residual = structured.stationarity_residual(dm, 1, s, fit.delta_tilde)
    assert np.max(np.abs(residual)) < 1e-10 * np.trace(dm.Sigma)


def test_full_span_reproduces_unstructured_fit(rng):
    for p, r, d in [(3, 3, 1), (3, 2, 1), (4, 3, 2)]:
        dm = random_design(rng, n=80, p=p, r=r)
        fit = structured.fit_structured(dm, d, structured.DeltaStructure.unrestricted(p))
        closed = pfc_core.fit_pfc(dm, d)
        assert fit.converged
        assert abs(fit.loglik - closed.loglik) < 1e-6
        assert np.linalg.norm(fit.delta_tilde - closed.delta_hat) < 1e-6 * np.linalg.norm(closed.delta_hat)
        assert np.max(matrixkit.principal_angles(fit.subspace, closed.reduction_span)) < 1e-6


def test_diagonal_fit_converges_to_stationary_point():
    _, dm, _ = _diag_design()
    s = structured.DeltaStructure.diagonal(dm.p)
    fit = structured.fit_structured(dm, 1, s)
    assert fit.converged and fit.iterations > 0
    assert fit.gradient_norm < 1e-6 * np.trace(dm.Sigma)
    np.testing.assert_allclose(fit.delta_tilde, s.compose(fit.delta_coeffs), atol=0)
    assert np.all(np.linalg.eigvalsh(fit.delta_tilde) > 0)
    # a diagonal Delta has a diagonal inverse
    assert not any(w.startswith('StructureClosureWarning') for w in fit.warnings)


def test_likelihood_sandwich():
    _, dm, _ = _diag_design()
    for d in (1, 2):
        iso = pfc_core.fit_isotonic_pfc(dm, d).loglik
        diag = structured.fit_structured(dm, d, structured.DeltaStructure.diagonal(dm.p)).loglik
        full = pfc_core.fit_pfc(dm, d).loglik
        assert iso <= diag + 1e-8 * abs(diag)
        assert diag <= full + 1e-8 * abs(full)


def test_diagonal_scaling_equivariance():
    data, dm, _ = _diag_design()
    a = np.array([0.5, 2.0, 3.0, 0.1])
    dm_a = design.build_design(design.Dataset(X=data.X * a, y=data.y), design.BasisSpec.polynomial(2))
    s = structured.DeltaStructure.diagonal(dm.p)
    fit = structured.fit_structured(dm, 1, s)
    fit_a = structured.fit_structured(dm_a, 1, s)
    mapped = matrixkit.Subspace(dim=1, basis=matrixkit.orthonormalize(fit.subspace.basis / a[:, np.newaxis]))
    assert np.max(matrixkit.principal_angles(fit_a.subspace, mapped)) < 1e-6


def test_diagonal_estimates_are_consistent():
    _, dm, truth = _diag_design(n=4000, degree=1, p=6)
    fit = structured.fit_structured(dm, 1, structured.DeltaStructure.diagonal(6))
    np.testing.assert_allclose(fit.delta_coeffs / np.diag(truth.delta), 1.0, atol=0.1)


def test_non_closed_structure_warns(rng):
    T = np.zeros((3, 3))
    T[0, 1] = T[1, 0] = T[1, 2] = T[2, 1] = 1.0
    s = structured.DeltaStructure.custom([np.eye(3), T])
    n = 200
    y = rng.standard_normal(n)
    L = np.linalg.cholesky(np.eye(3) + 0.3 * T)
    X = np.outer(y, [1.0, 0.5, -0.5]) + rng.standard_normal((n, 3)) @ L.T
    dm = design.build_design(design.Dataset(X=X, y=y), design.BasisSpec.polynomial(1))
    fit = structured.fit_structured(dm, 1, s)
    assert any(w.startswith('StructureClosureWarning') for w in fit.warnings)


def test_initial_delta_not_spd(rng):
    dm = random_design(rng, n=60, p=3, r=1)
    s = structured.DeltaStructure.custom([np.ones((3, 3))])
    with pytest.raises(InvalidInput):
        structured.fit_structured(dm, 1, s)


def test_structure_dimension_mismatch(rng):
    dm = random_design(rng, n=60, p=3, r=1)
    with pytest.raises(InvalidInput):
        structured.fit_structured(dm, 1, structured.DeltaStructure.diagonal(4))


def test_max_iter_returns_best_iterate():
    _, dm, _ = _diag_design()
    fit = structured.fit_structured(dm, 1, structured.DeltaStructure.diagonal(dm.p), tol=0.0, max_iter=2)
    assert not fit.converged and fit.iterations == 2
    assert any('did not converge' in w for w in fit.warnings)


def test_failed_halving_keeps_best_iterate(monkeypatch):
    _, dm, _ = _diag_design()
    structure = structured.DeltaStructure.diagonal(dm.p)
    start = structure.compose(structure.project(dm.SigmaRes))
    calls = []

    # every new Delta scores lower than the last one, so no step is ever an ascent
    def falling_loglik(design_matrices, d, delta):
        calls.append(1)
        return -float(len(calls))

    monkeypatch.setattr(pfc_core, 'loglik_delta', falling_loglik)
    fit = structured.fit_structured(dm, 1, structure, tol=1.0, max_iter=5)
    assert len(calls) == 2 + structured.MAX_HALVINGS
    assert fit.converged
    assert fit.loglik == -1.0
    np.testing.assert_array_equal(fit.delta_tilde, start)


########################################################################################################################
# test_structure

def test_structure_test_statistic():
    _, dm, _ = _diag_design()
    s = structured.DeltaStructure.diagonal(dm.p)
    report = structured.test_structure(dm, s)
    assert report.kind == 'structure'
    assert report.df == dm.p * (dm.p + 1) // 2 - dm.p
    assert report.statistic >= 0
    assert report.details['w'] == dm.m
    fit = structured.fit_structured(dm, dm.m, s)
    expected = 2 * (pfc_core.loglik_profile(dm, dm.m) - fit.loglik)
    assert report.statistic == pytest.approx(expected, rel=1e-8)
    assert not report.details['unreliable']


def test_structure_test_refuses_unrestricted(rng):
    dm = random_design(rng, n=60, p=3, r=2)
    with pytest.raises(InvalidInput):
        structured.test_structure(dm, structured.DeltaStructure.unrestricted(3))


def test_structure_test_rejects_wrong_structure(rng):
    dm = random_design(rng, n=500, p=4, r=2)
    report = structured.test_structure(dm, structured.DeltaStructure.diagonal(4), w=1)
    assert report.p_value < 1e-6
