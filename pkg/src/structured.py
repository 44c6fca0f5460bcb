# PFC with a linearly structured error covariance Delta = sum_i delta_i G_i,
# fitted by a damped fixed-point iteration, and the likelihood ratio test of the structure

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

import matrixkit
import pfc_core
import inference
from exceptions import InvalidInput, IterationDiverged

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500
MAX_HALVINGS = 20
CLOSURE_TOL = 1e-6

STRUCTURE_KINDS = ['diagonal', 'grouped_diagonal', 'equicorrelated', 'custom']


@dataclass(frozen=True, eq=False)
class DeltaStructure:
    kind: str
    basis: np.ndarray          # m x p x p
    labels: tuple = ()

    def __post_init__(self):
        if self.kind not in STRUCTURE_KINDS:
            raise InvalidInput(f'unknown structure kind {self.kind!r}')
        G = np.asarray(self.basis, dtype=float)
        if G.ndim != 3 or G.shape[1] != G.shape[2] or G.shape[0] < 1:
            raise InvalidInput(f'structure basis must be m x p x p, got shape {G.shape}')
        if not np.all(np.isfinite(G)):
            raise InvalidInput('structure basis has non-finite entries')
        if not np.allclose(G, np.transpose(G, (0, 2, 1)), atol=1e-12):
            raise InvalidInput('structure basis matrices must be symmetric')
        m, p = G.shape[0], G.shape[1]
        if m > p * (p + 1) // 2:
            raise InvalidInput(f'{m} basis matrices exceed the p(p+1)/2 = {p * (p + 1) // 2} symmetric dimensions')
        vec = G.reshape(m, p * p).T
        if np.linalg.matrix_rank(vec) < m:
            raise InvalidInput('structure basis matrices are linearly dependent')
        object.__setattr__(self, 'basis', G)

    @classmethod
    def diagonal(cls, p):
        G = np.zeros((p, p, p))
        G[np.arange(p), np.arange(p), np.arange(p)] = 1.0
        return cls('diagonal', G, tuple(f'delta_{i + 1}' for i in range(p)))

    @classmethod
    def grouped_diagonal(cls, groups):
        """Diagonal Delta whose entries are shared within groups; groups[j] labels coordinate j."""
        groups = [str(g).strip() for g in groups]
        levels = list(dict.fromkeys(groups))
        p = len(groups)
        G = np.zeros((len(levels), p, p))
        for j, g in enumerate(groups):
            G[levels.index(g), j, j] = 1.0
        return cls('grouped_diagonal', G, tuple(levels))

    @classmethod
    def equicorrelated(cls, p):
        G = np.stack([np.eye(p), np.ones((p, p))])
        return cls('equicorrelated', G, ('identity', 'ones'))

    @classmethod
    def custom(cls, matrices):
        G = np.asarray(matrices, dtype=float)
        return cls('custom', G, tuple(f'G_{i + 1}' for i in range(G.shape[0])))

    @classmethod
    def unrestricted(cls, p):
        """Every symmetric p x p matrix: E_ii and E_ij + E_ji."""
        mats = []
        for i in range(p):
            for j in range(i, p):
                E = np.zeros((p, p))
                E[i, j] = E[j, i] = 1.0
                mats.append(E)
        return cls.custom(mats)

    @property
    def m(self):
        return self.basis.shape[0]

    @property
    def p(self):
        return self.basis.shape[1]

    @cached_property
    def vec_basis(self):
        # p^2 x m
        return self.basis.reshape(self.m, self.p * self.p).T

    @cached_property
    def gram_factor(self):
        return linalg.cho_factor(self.vec_basis.T @ self.vec_basis)

    def project(self, M):
        """Least-squares coefficients of M in the span of the G_i."""
        return linalg.cho_solve(self.gram_factor, self.vec_basis.T @ np.asarray(M, dtype=float).reshape(-1))

    def compose(self, coeffs):
        return np.tensordot(coeffs, self.basis, axes=1)

    def closure_residual(self, M):
        """Relative distance of M from the span of the G_i."""
        coeffs = self.project(M)
        return float(np.linalg.norm(self.compose(coeffs) - M) / max(np.linalg.norm(M), np.finfo(float).tiny))


@dataclass(frozen=True, eq=False)
class StructuredFit:
    d: int
    delta_coeffs: np.ndarray
    delta_tilde: np.ndarray
    loglik: float
    subspace: matrixkit.Subspace
    iterations: int
    converged: bool
    gradient_norm: float
    structure: DeltaStructure = None
    warnings: tuple = field(default=())


def load_structure_file(path, p):
    """m blocks of p rows of p whitespace-separated numbers."""
    values = np.loadtxt(path, dtype=float, ndmin=2)
    if values.shape[1] != p or values.shape[0] % p != 0:
        raise InvalidInput(f'{path}: expected blocks of {p} rows with {p} numbers, got a {values.shape} table')
    return DeltaStructure.custom(values.reshape(-1, p, p))


def parse_structure(text, p):
    """diag, equicorr, groups=<labels> or custom=<path>."""
    text = str(text).strip()
    if text in ('diag', 'diagonal'):
        return DeltaStructure.diagonal(p)
    if text in ('equicorr', 'equicorrelated'):
        return DeltaStructure.equicorrelated(p)
    if text.startswith('groups='):
        groups = text[len('groups='):].split(',')
        if len(groups) != p:
            raise InvalidInput(f'groups= needs {p} labels, one per predictor, got {len(groups)}')
        return DeltaStructure.grouped_diagonal(groups)
    if text.startswith('custom='):
        return load_structure_file(text[len('custom='):], p)
    raise InvalidInput(f'cannot parse structure {text!r}; use diag, equicorr, groups=<labels> or custom=<path>')


########################################################################################################################
# fixed-point iteration

def _is_spd(M):
    try:
        linalg.cholesky(M, lower=True)
        return True
    except linalg.LinAlgError:
        return False


def _update_target(design, d, delta):
    """Sigma_res + sum_{i>d} lambda_i Delta^{1/2} u_i u_i^T Delta^{1/2}, (lambda_i, u_i) eigenpairs of
    Delta^{-1/2} Sigma_fit Delta^{-1/2}."""
    d_sqrt = matrixkit.sym_power(delta, 0.5)
    d_isqrt = matrixkit.sym_power(delta, -0.5)
    eig = matrixkit.eig_sym_desc(d_isqrt @ design.SigmaFit @ d_isqrt)
    U = eig.vectors[:, d:design.m]
    lam = np.maximum(eig.values[d:design.m], 0.0)
    W = design.SigmaRes + d_sqrt @ (U * lam) @ U.T @ d_sqrt
    return (W + W.T) / 2


def stationarity_residual(design, d, structure, delta):
    """Components tr(Delta G_h) - tr(W(Delta) G_h); zero at a fixed point."""
    W = _update_target(design, d, delta)
    return structure.vec_basis.T @ (delta - W).reshape(-1)


def fit_structured(design, d, structure, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """MLE of the PFC model with Delta restricted to span(G_1, .., G_m).

    Iterates delta <- (G'G)^{-1} G' vec(W(Delta)) from the projection of Sigma_res, halving the
    step toward the previous iterate when the likelihood drops or Delta leaves the SPD cone.
    """
    d = pfc_core._check_d(design, d)
    if structure.p != design.p:
        raise InvalidInput(f'structure is for p={structure.p}, data have p={design.p}')

    coeffs = structure.project(design.SigmaRes)
    delta = structure.compose(coeffs)
    if not _is_spd(delta):
        raise InvalidInput(f'the {structure.kind} projection of Sigma_res is not positive definite; '
                           f'choose a structure that fits the residual covariance better')
    loglik = pfc_core.loglik_delta(design, d, delta)

    warnings = []
    iterations = 0
    converged = True
    if d < design.m:
        converged = False
        best = (loglik, coeffs, delta)
        for iterations in range(1, max_iter + 1):
            target = structure.project(_update_target(design, d, delta))
            step = target - coeffs
            new_coeffs, new_delta, new_loglik = target, structure.compose(target), -np.inf
            for halving in range(MAX_HALVINGS + 1):
                if halving > 0:
                    new_coeffs = coeffs + step / 2 ** halving
                    new_delta = structure.compose(new_coeffs)
                if _is_spd(new_delta):
                    new_loglik = pfc_core.loglik_delta(design, d, new_delta)
                    if new_loglik >= loglik - 1e-12 * abs(loglik):
                        break
            if not _is_spd(new_delta):
                raise IterationDiverged(f'Delta left the positive definite cone at iteration {iterations}',
                                        iteration=iterations)

            change = np.linalg.norm(new_coeffs - coeffs) / max(np.linalg.norm(coeffs), np.finfo(float).tiny)
            coeffs, delta, loglik = new_coeffs, new_delta, new_loglik
            if loglik > best[0]:
                best = (loglik, coeffs, delta)
            if change < tol:
                converged = True
                break
        if not converged:
            msg = f'structured fit did not converge in {max_iter} iterations; returning the best iterate'
            logger.warning(msg)
            warnings.append(msg)
        # a step that no halving could rescue lowers L; never report it over the best iterate
        if loglik < best[0]:
            loglik, coeffs, delta = best

    gradient = stationarity_residual(design, d, structure, delta)
    closure = structure.closure_residual(linalg.inv(delta))
    if closure > CLOSURE_TOL:
        msg = (f'StructureClosureWarning: the inverse of the fitted Delta is {closure:.2e} (relative) away from '
               f'the {structure.kind} structure')
        logger.warning(msg)
        warnings.append(msg)

    logger.debug(f'structured fit: {iterations} iterations, converged={converged}, loglik={loglik:.6f}')
    return StructuredFit(d=d, delta_coeffs=coeffs, delta_tilde=delta, loglik=float(loglik),
                         subspace=matrixkit.sd_subspace(delta, design.SigmaFit, d),
                         iterations=iterations, converged=converged,
                         gradient_norm=float(np.max(np.abs(gradient))),
                         structure=structure, warnings=tuple(warnings))


def test_structure(design, structure, w=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Omega_w = 2(L_w - L_w(Delta_tilde)) with p(p+1)/2 - m degrees of freedom; w defaults to min(r, p)."""
    p = design.p
    df = p * (p + 1) // 2 - structure.m
    if df <= 0:
        raise InvalidInput('the structure spans every symmetric matrix; there is nothing to test')
    w = design.m if w is None else int(w)
    fit = fit_structured(design, w, structure, tol=tol, max_iter=max_iter)
    l_w = pfc_core.loglik_closed_form(design, w)
    report = inference.make_report(2 * (l_w - fit.loglik), df, 'structure', method=structure.kind, scale=l_w,
                                   details={'w': w, 'loglik': float(l_w), 'loglik_structured': fit.loglik,
                                            'iterations': fit.iterations, 'converged': fit.converged,
                                            'unreliable': not fit.converged})
    return report
