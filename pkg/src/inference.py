# dimension selection (sequential likelihood ratio tests, AIC, BIC) and tests of
# conditional independence of Y and a subset of predictors given the rest

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

import matrixkit
import pfc_core
from design import canonical_correlations
from exceptions import InvalidInput, SingularMatrix, InternalConsistencyError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
# statistics above -NEGATIVE_TOL (relative to the log-likelihood scale) are rounding noise
NEGATIVE_TOL = 1e-8

REPORT_KINDS = ['lrt_dim', 'predictor', 'structure']


@dataclass(frozen=True)
class TestReport:
    statistic: float
    df: int
    p_value: float
    kind: str
    method: str = ''
    details: dict = field(default_factory=dict)

    # keep pytest from collecting this class
    __test__ = False

    def to_dict(self):
        out = {'kind': self.kind, 'method': self.method, 'statistic': self.statistic,
               'df': self.df, 'p_value': self.p_value}
        out.update(self.details)
        return out


@dataclass(frozen=True, eq=False)
class DimSelection:
    chosen_d: int
    per_w: pd.DataFrame
    method: str
    alpha: float = None

    def to_dict(self):
        return {'kind': 'dim_selection', 'method': self.method, 'alpha': self.alpha,
                'chosen_d': self.chosen_d, 'per_w': self.per_w.to_dict(orient='records')}


@dataclass(frozen=True, eq=False)
class RestrictedFit:
    """MLE under the hypothesis that Y is independent of the inactive predictors given the active ones."""
    d: int
    active: tuple
    delta_hat: np.ndarray
    subspace: matrixkit.Subspace
    loglik: float


def make_report(statistic, df, kind, method='', scale=1.0, details=None):
    """TestReport with p-value; tiny negative statistics from rounding are clamped to 0."""
    statistic = float(statistic)
    if statistic < 0:
        if statistic < -NEGATIVE_TOL * max(1.0, abs(scale)):
            raise InternalConsistencyError(f'{kind} statistic {statistic:.3e} is negative beyond rounding; '
                                           f'the nested fits are inconsistent')
        statistic = 0.0
    return TestReport(statistic=statistic, df=int(df), p_value=matrixkit.chi2_sf(statistic, int(df)),
                      kind=kind, method=method, details=details or {})


########################################################################################################################
# dimension selection

def lrt_dim_test(design, w, logliks=None):
    """Lambda_w = 2(L_min(r,p) - L_w) with (r - w)(p - w) degrees of freedom."""
    m = design.m
    if not (0 <= w < m):
        raise InvalidInput(f'w={w} outside 0..{m - 1}')
    l_full = pfc_core.loglik_profile(design, m) if logliks is None else logliks[m]
    l_w = pfc_core.loglik_profile(design, w) if logliks is None else logliks[w]
    return make_report(2 * (l_full - l_w), (design.r - w) * (design.p - w), 'lrt_dim',
                       method='lrt', scale=l_full, details={'w': int(w)})


def select_d_lrt(design, alpha=DEFAULT_ALPHA):
    """First w in 0, 1, .. whose test Lambda_w is not rejected at level alpha."""
    if not (0 < alpha < 1):
        raise InvalidInput(f'alpha={alpha} outside (0, 1)')
    m = design.m
    logliks = [pfc_core.loglik_profile(design, w) for w in range(m + 1)]
    rows = []
    chosen = None
    for w in range(m + 1):
        row = {'w': w, 'loglik': logliks[w], 'statistic': np.nan, 'df': 0, 'p_value': np.nan, 'decision': ''}
        if w < m:
            rep = lrt_dim_test(design, w, logliks)
            row.update(statistic=rep.statistic, df=rep.df, p_value=rep.p_value,
                       decision='reject' if rep.p_value <= alpha else 'accept')
            if chosen is None and rep.p_value > alpha:
                chosen = w
        rows.append(row)
    chosen = m if chosen is None else chosen
    logger.info(f'Sequential LRT (alpha={alpha}): d = {chosen}')
    return DimSelection(chosen_d=chosen, per_w=pd.DataFrame(rows), method='lrt', alpha=alpha)


def ic_penalty_count(p, r, w):
    """g(w) = p(p+3)/2 + rw + w(p-w): parameters of the PFC model with dimension w."""
    return p * (p + 3) / 2 + r * w + w * (p - w)


def select_d_ic(design, criterion='bic'):
    """argmin over w of IC(w) = -2 L_w + h(n) g(w), h = log n (bic) or 2 (aic)."""
    criterion = criterion.lower()
    if criterion == 'bic':
        h = np.log(design.n)
    elif criterion == 'aic':
        h = 2.0
    else:
        raise InvalidInput(f'unknown information criterion {criterion!r}; use aic or bic')
    rows = []
    for w in range(design.m + 1):
        loglik = pfc_core.loglik_profile(design, w)
        g = ic_penalty_count(design.p, design.r, w)
        rows.append({'w': w, 'loglik': loglik, 'penalty': g, 'ic': -2 * loglik + h * g})
    table = pd.DataFrame(rows)
    chosen = int(np.argmin(table['ic'].to_numpy()))  # first minimum on ties
    table['decision'] = np.where(table['w'] == chosen, 'chosen', '')
    logger.info(f'{criterion.upper()}: d = {chosen}')
    return DimSelection(chosen_d=chosen, per_w=table, method=criterion)


def select_d(design, method='lrt', alpha=DEFAULT_ALPHA):
    if method == 'lrt':
        return select_d_lrt(design, alpha)
    return select_d_ic(design, method)


########################################################################################################################
# predictor tests

def _check_active(p, active_indices):
    active = [int(i) for i in active_indices]
    if len(active) == 0 or len(active) >= p:
        raise InvalidInput(f'active set must be a nonempty proper subset of the {p} predictors')
    if len(set(active)) != len(active) or min(active) < 0 or max(active) >= p:
        raise InvalidInput(f'invalid active predictor indices {active} for p={p}')
    inactive = [j for j in range(p) if j not in active]
    return active, inactive


def _logdet(A, label):
    sign, value = np.linalg.slogdet(A)
    if sign <= 0:
        raise SingularMatrix(f'{label} is singular')
    return value


def test_predictors(design, d, active_indices, method='fixed_d'):
    """Likelihood ratio test that Y is independent of the inactive predictors given the active ones.

    The active predictors form block 1 (p1 columns), the tested ones block 2 (p2 columns).
    Theta_d = 2(L_d - L_d^1) with d * p2 degrees of freedom.
    :return: (TestReport, RestrictedFit)
    """
    n, p, r = design.n, design.p, design.r
    active, inactive = _check_active(p, active_indices)
    p1, p2 = len(active), len(inactive)
    tau1 = min(r, p1)
    if int(d) != d or not (1 <= d <= tau1):
        raise InvalidInput(f'd={d} outside 1..min(r, p1) = {tau1}')
    d = int(d)

    a, b = np.ix_(active, active), np.ix_(inactive, inactive)
    ab = np.ix_(active, inactive)
    S11, S12, S22 = design.Sigma[a], design.Sigma[ab], design.Sigma[b]
    R11, R12, R22 = design.SigmaRes[a], design.SigmaRes[ab], design.SigmaRes[b]
    F11 = design.SigmaFit[a]

    try:
        s11_inv_s12 = linalg.solve(S11, S12, assume_a='pos')
        r11_inv_r12 = linalg.solve(R11, R12, assume_a='pos')
        r11_isqrt = matrixkit.sym_power(R11, -0.5)
        r11_sqrt = matrixkit.sym_power(R11, 0.5)
    except linalg.LinAlgError:
        raise SingularMatrix('partitioned covariance block Sigma_11 or Sigma_11,res is singular')
    S22_1 = S22 - S12.T @ s11_inv_s12
    R22_1 = R22 - R12.T @ r11_inv_r12

    eig1 = matrixkit.eig_sym_desc(r11_isqrt @ F11 @ r11_isqrt)
    lam1 = np.maximum(eig1.values, 0.0)
    lam1[tau1:] = 0.0

    logdet_r11 = _logdet(R11, 'Sigma_11,res')
    logdet_s22_1 = _logdet(S22_1, 'Sigma_22.1')
    l_full = pfc_core.loglik_closed_form(design, d)
    l_restricted = (-n * p / 2 * (1 + pfc_core.LOG2PI) - n / 2 * logdet_r11 - n / 2 * logdet_s22_1
                    - n / 2 * np.sum(np.log1p(lam1[d:tau1])))

    # canonical-correlation form of the same statistic
    r2 = design.canonical_correlations ** 2
    t2 = canonical_correlations(design.Xc[:, active], design.Fc) ** 2
    alt = (n * logdet_s22_1 - n * _logdet(R22_1, 'Sigma_22.1,res')
           + n * np.sum(np.log1p(-r2[d:design.m])) - n * np.sum(np.log1p(-t2[d:tau1])))

    # restricted MLE of Delta in blocks and the restricted reduction (Sigma_11,res^{-1/2} G1, 0)
    K = np.zeros_like(lam1)
    K[d:] = lam1[d:]
    V = eig1.vectors
    D11 = r11_sqrt @ (V * (1 + K)) @ V.T @ r11_sqrt
    D12 = D11 @ s11_inv_s12
    D22 = S22_1 + s11_inv_s12.T @ D11 @ s11_inv_s12
    delta_hat = np.empty((p, p))
    delta_hat[a] = D11
    delta_hat[ab] = D12
    delta_hat[np.ix_(inactive, active)] = D12.T
    delta_hat[b] = D22

    basis = np.zeros((p, d))
    basis[active] = matrixkit.orthonormalize(r11_isqrt @ V[:, :d])
    restricted = RestrictedFit(d=d, active=tuple(active), delta_hat=(delta_hat + delta_hat.T) / 2,
                               subspace=matrixkit.Subspace(dim=d, basis=basis), loglik=float(l_restricted))

    report = make_report(2 * (l_full - l_restricted), d * p2, 'predictor', method=method, scale=l_full,
                         details={'d': d, 'active': active, 'tested': inactive,
                                  'statistic_cancor': float(alt), 'loglik': float(l_full),
                                  'loglik_restricted': float(l_restricted)})
    return report, restricted


def test_predictors_maxw(design, active_indices):
    """Predictor test at the working dimension w = min(r, p1), free of the choice of d."""
    active, _ = _check_active(design.p, active_indices)
    w = min(design.r, len(active))
    report, _ = test_predictors(design, w, active, method='maxw')
    return report


def screen_predictors(design, d):
    """Test every predictor separately given all the others. Raw p-values, no multiplicity adjustment."""
    rows = []
    for j in range(design.p):
        active = [i for i in range(design.p) if i != j]
        report, _ = test_predictors(design, d, active)
        rows.append({'predictor': _name(design, j), 'index': j, 'statistic': report.statistic,
                     'df': report.df, 'p_value': report.p_value})
    return pd.DataFrame(rows)


def _name(design, j):
    return design.predictor_names[j] if design.predictor_names else f'x{j + 1}'


def backward_eliminate(design, d, alpha=DEFAULT_ALPHA):
    """Drop the predictor with the largest p-value while that p-value exceeds alpha.

    :return: DataFrame with one row per round (removed predictor, its statistic and p-value, what remains)
    """
    remaining = list(range(design.p))
    history = []
    round_no = 0
    while len(remaining) - 1 >= max(d, 1) and len(remaining) > 1:
        round_no += 1
        sub = design.select(remaining)
        if d > min(sub.r, len(remaining) - 1):
            break
        best = None
        for k in range(len(remaining)):
            active = [i for i in range(len(remaining)) if i != k]
            report, _ = test_predictors(sub, d, active)
            if best is None or report.p_value > best[1].p_value:
                best = (k, report)
        k, report = best
        if report.p_value <= alpha:
            break
        removed = remaining.pop(k)
        logger.info(f'Backward elimination round {round_no}: removed {_name(design, removed)} (p={report.p_value:.4g})')
        history.append({'round': round_no, 'removed': _name(design, removed), 'index': removed,
                        'statistic': report.statistic, 'df': report.df, 'p_value': report.p_value,
                        'remaining': ','.join(_name(design, i) for i in remaining)})
    return pd.DataFrame(history, columns=['round', 'removed', 'index', 'statistic', 'df', 'p_value', 'remaining'])
