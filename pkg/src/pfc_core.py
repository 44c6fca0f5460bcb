# maximum likelihood fits of the PC, isotonic PFC and full PFC inverse-regression models,
# log-likelihood evaluation and the sufficient reduction R(X)

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

import matrixkit
from exceptions import InvalidInput, NumericalDegeneracy, SingularMatrix

logger = logging.getLogger(__name__)

LOG2PI = np.log(2 * np.pi)
# canonical correlations this close to 1 make log(1 - r^2) meaningless
PERFECT_CORR_TOL = 1e-12

MODEL_KINDS = ['pfc_full', 'isotonic_pfc', 'pc']


@dataclass(frozen=True, eq=False)
class PfcFit:
    d: int
    mu_hat: np.ndarray
    delta_hat: np.ndarray
    gamma_span: matrixkit.Subspace
    beta_hat: np.ndarray
    lambda_hat: np.ndarray
    loglik: float
    reduction: np.ndarray       # orthonormal basis of the estimated reduction subspace
    coefficients: np.ndarray    # columns eta_j with eta^T Delta_hat eta = I, used by reduce()
    model_kind: str
    spectrum: np.ndarray = None
    warnings: tuple = field(default=())

    @property
    def p(self):
        return len(self.mu_hat)

    @property
    def reduction_span(self):
        return matrixkit.Subspace(dim=self.d, basis=self.reduction)


def _check_d(design, d, upper=None):
    upper = design.m if upper is None else upper
    if int(d) != d or not (1 <= d <= upper):
        raise InvalidInput(f'd={d} outside 1..{upper}; use select-d to choose the dimension')
    return int(d)


def _spectrum_warnings(values, count, label):
    gaps = matrixkit.degenerate_gaps(values, count)
    if not gaps:
        return ()
    msg = (f'DegenerateSpectrum: {label} eigenvalues {[g + 1 for g in gaps]} and their successors '
           f'coincide to within {matrixkit.GAP_TOL:g} of the spectral radius; the ordered convention was used')
    logger.warning(msg)
    return (msg,)


def _beta_hat(gamma, delta_hat, Bhat):
    # (G^T D^-1 G)^-1 G^T D^-1 B
    try:
        cho = linalg.cho_factor(delta_hat)
    except linalg.LinAlgError:
        raise SingularMatrix('Delta_hat is not positive definite')
    dg = linalg.cho_solve(cho, gamma)
    return linalg.solve(gamma.T @ dg, dg.T @ Bhat, assume_a='pos')


def _normalized_coefficients(basis, delta_hat):
    # rescale columns to eta^T Delta eta = 1; keeps the sign convention of `basis`
    scale = np.sqrt(np.einsum('ij,ik,kj->j', basis, delta_hat, basis))
    return basis / scale


########################################################################################################################
# log-likelihood

def loglik_profile(design, d):
    """Maximized log-likelihood L_d from the squared sample canonical correlations.

    L_d = -np/2 - (np/2) log 2pi - (n/2) log|Sigma_res| + (n/2) sum_{i>d} log(1 - r_i^2), 0 <= d <= min(r, p)
    """
    if int(d) != d or not (0 <= d <= design.m):
        raise InvalidInput(f'd={d} outside 0..{design.m}')
    n, p = design.n, design.p
    r2 = design.canonical_correlations ** 2
    if np.any(r2 >= 1 - PERFECT_CORR_TOL):
        raise NumericalDegeneracy('a sample canonical correlation between X and f_y is 1; the fit is perfect')
    tail = np.sum(np.log1p(-r2[int(d):]))
    return -n * p / 2 * (1 + LOG2PI) - n / 2 * design.logdet_sigma_res + n / 2 * tail


def loglik_closed_form(design, d):
    """The same L_d written with the PFC eigenvalues: ... - (n/2) sum_{i>d} log(1 + lambda_i)."""
    n, p = design.n, design.p
    lam = design.pfc_spectrum.values
    return -n * p / 2 * (1 + LOG2PI) - n / 2 * design.logdet_sigma_res - n / 2 * np.sum(np.log1p(lam[int(d):]))


def loglik_delta(design, d, delta):
    """Partially maximized log-likelihood L_d(Delta) for a fixed SPD Delta.

    -(np/2) log 2pi - (n/2) log|Delta| - (n/2) tr(Delta^-1 Sigma_res) - (n/2) sum_{i>d} lambda_i(Delta^-1 Sigma_fit)
    """
    n, p = design.n, design.p
    delta = np.asarray(delta, dtype=float)
    try:
        cho = linalg.cho_factor(delta)
    except linalg.LinAlgError:
        raise SingularMatrix('Delta is not positive definite')
    logdet = 2 * np.sum(np.log(np.diag(cho[0])))
    trace_res = np.trace(linalg.cho_solve(cho, design.SigmaRes))
    lam = linalg.eigh(design.SigmaFit, delta, eigvals_only=True)[::-1]
    return -n * p / 2 * LOG2PI - n / 2 * logdet - n / 2 * trace_res - n / 2 * np.sum(lam[int(d):])


########################################################################################################################
# fits

def fit_pfc(design, d):
    """Closed-form MLE of the PFC model with unstructured Delta.

    Delta_hat = Sigma_res + Sigma_res^{1/2} V K V^T Sigma_res^{1/2}, K = diag(0, .., 0, lambda_{d+1}, .., lambda_p)
    """
    d = _check_d(design, d)
    eig = design.pfc_spectrum
    lam = eig.values
    V = eig.vectors
    res_sqrt = design.sigma_res_sqrt

    K = np.zeros_like(lam)
    K[d:] = lam[d:]
    delta_hat = design.SigmaRes + res_sqrt @ (V * K) @ V.T @ res_sqrt
    delta_hat = (delta_hat + delta_hat.T) / 2

    # S_d(Sigma_res, Sigma_fit)
    raw = design.sigma_res_isqrt @ V[:, :d]
    reduction = matrixkit.orthonormalize(raw)
    coefficients = _normalized_coefficients(matrixkit.fix_signs(raw), delta_hat)

    # span(Gamma) = Delta_hat times the reduction subspace
    gamma = matrixkit.orthonormalize(delta_hat @ reduction)
    beta_hat = _beta_hat(gamma, delta_hat, design.Bhat)

    warnings = _spectrum_warnings(lam, design.m, 'PFC')
    return PfcFit(d=d, mu_hat=design.x_mean.copy(), delta_hat=delta_hat,
                  gamma_span=matrixkit.Subspace(dim=d, basis=gamma), beta_hat=beta_hat,
                  lambda_hat=lam.copy(), loglik=loglik_closed_form(design, d),
                  reduction=reduction, coefficients=coefficients, model_kind='pfc_full',
                  spectrum=lam.copy(), warnings=warnings)


def fit_pc(design, d):
    """Principal components as the MLE under Delta = sigma^2 I with no response information."""
    # sigma^2 needs at least one trailing eigenvalue
    d = _check_d(design, d, upper=min(design.m, design.p - 1))
    n, p = design.n, design.p
    eig = matrixkit.eig_sym_desc(design.Sigma)
    values = eig.values
    sigma2 = float(np.mean(values[d:]))
    if sigma2 <= 0:
        raise NumericalDegeneracy('trailing eigenvalues of Sigma are zero; sigma^2 cannot be estimated')

    reduction = eig.vectors[:, :d].copy()
    delta_hat = sigma2 * np.eye(p)
    loglik = -n / 2 * (p * LOG2PI + np.sum(np.log(values[:d])) + (p - d) * np.log(sigma2) + p)

    warnings = _spectrum_warnings(values, p, 'PC')
    return PfcFit(d=d, mu_hat=design.x_mean.copy(), delta_hat=delta_hat,
                  gamma_span=matrixkit.Subspace(dim=d, basis=reduction.copy()),
                  beta_hat=reduction.T @ design.Bhat, lambda_hat=design.pfc_spectrum.values.copy(),
                  loglik=float(loglik), reduction=reduction, coefficients=reduction / np.sqrt(sigma2),
                  model_kind='pc', spectrum=values.copy(), warnings=warnings)


def fit_isotonic_pfc(design, d):
    """PFC with Delta = sigma^2 I: the reduction is spanned by the top d eigenvectors of Sigma_fit."""
    d = _check_d(design, d)
    p = design.p
    eig = matrixkit.eig_sym_desc(design.SigmaFit)
    values = np.maximum(eig.values, 0.0)
    if values[0] <= 1e-12 * max(np.trace(design.Sigma), np.finfo(float).tiny):
        raise NumericalDegeneracy('Sigma_fit is zero: f_y carries no information about X')

    sigma2 = float((np.trace(design.SigmaRes) + np.sum(values[d:])) / p)
    reduction = eig.vectors[:, :d].copy()
    delta_hat = sigma2 * np.eye(p)

    warnings = _spectrum_warnings(values, design.m, 'isotonic PFC')
    return PfcFit(d=d, mu_hat=design.x_mean.copy(), delta_hat=delta_hat,
                  gamma_span=matrixkit.Subspace(dim=d, basis=reduction.copy()),
                  beta_hat=reduction.T @ design.Bhat, lambda_hat=design.pfc_spectrum.values.copy(),
                  loglik=loglik_delta(design, d, delta_hat), reduction=reduction,
                  coefficients=reduction / np.sqrt(sigma2), model_kind='isotonic_pfc',
                  spectrum=values, warnings=warnings)


def fit_model(design, d, model_kind='pfc_full'):
    if model_kind == 'pfc_full':
        return fit_pfc(design, d)
    elif model_kind == 'isotonic_pfc':
        return fit_isotonic_pfc(design, d)
    elif model_kind == 'pc':
        return fit_pc(design, d)
    raise InvalidInput(f'unknown model {model_kind!r}; expected one of {MODEL_KINDS}')


def reduce(fit, Xnew):
    """Sufficient reduction R(X) of new observations (rows), m x d.

    Coordinates are not mean-centered. They use the fit's normalized coefficients, so they are
    unchanged up to column sign when the data are transformed by a full-rank A and refitted.
    """
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim == 1:
        Xnew = Xnew[np.newaxis, :]
    if Xnew.ndim != 2 or Xnew.shape[1] != fit.p:
        raise InvalidInput(f'new data must have {fit.p} columns, got shape {Xnew.shape}')
    return Xnew @ fit.coefficients


class EquivalentSubspaces(NamedTuple):
    delta_sigma: matrixkit.Subspace
    res_sigma: matrixkit.Subspace
    delta_fit: matrixkit.Subspace
    res_fit: matrixkit.Subspace
    sigma_fit: matrixkit.Subspace


def equivalent_subspaces(design, d):
    """The five equal forms of the MLE of the reduction subspace."""
    fit = fit_pfc(design, d)
    delta_hat = fit.delta_hat
    return EquivalentSubspaces(
        delta_sigma=matrixkit.sd_subspace(delta_hat, design.Sigma, fit.d),
        res_sigma=matrixkit.sd_subspace(design.SigmaRes, design.Sigma, fit.d),
        delta_fit=matrixkit.sd_subspace(delta_hat, design.SigmaFit, fit.d),
        res_fit=matrixkit.sd_subspace(design.SigmaRes, design.SigmaFit, fit.d),
        sigma_fit=matrixkit.sd_subspace(design.Sigma, design.SigmaFit, fit.d),
    )
