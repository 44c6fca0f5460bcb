# turn raw (X, y) data into the inverse-regression design:
# f_y basis construction, centering, B_hat and the moment matrices Sigma, Sigma_fit, Sigma_res

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import pandas as pd
from scipy import linalg

import matrixkit
from exceptions import (InvalidInput, SchemaError, ParseError, DegenerateResponse,
                        RankDeficientBasis, ResidualCovSingular)

logger = logging.getLogger(__name__)

# Sigma_res is refused when its smallest eigenvalue falls below this fraction of lambda_max(Sigma)
RES_SPD_TOL = 1e-10

BASIS_KINDS = ['polynomial', 'slices', 'categorical', 'piecewise_polynomial', 'custom']


########################################################################################################################
# data containers

@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    predictor_names: tuple = ()
    response_name: str = 'y'
    categorical: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, np.newaxis]
        if X.ndim != 2:
            raise InvalidInput(f'X must be an n x p matrix, got shape {X.shape}')
        y = np.asarray(self.y)
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise InvalidInput(f'y must be a vector of length n={X.shape[0]}, got shape {y.shape}')
        if X.shape[0] < 2:
            raise InvalidInput('at least 2 observations are needed')
        if not np.all(np.isfinite(X)):
            raise InvalidInput('X has non-finite entries')
        if self.categorical:
            y = y.astype(object) if y.dtype.kind not in 'iu' else y
            if len(np.unique(y)) < 2:
                raise DegenerateResponse('categorical response needs at least 2 distinct labels')
        else:
            try:
                y = y.astype(float)
            except (TypeError, ValueError):
                raise InvalidInput('continuous response must be numeric; declare it categorical instead')
            if not np.all(np.isfinite(y)):
                raise InvalidInput('y has non-finite entries')
        names = tuple(self.predictor_names) or tuple(f'x{j + 1}' for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InvalidInput(f'{len(names)} predictor names for {X.shape[1]} columns')
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'predictor_names', names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class BasisSpec:
    kind: str
    degree: int = 0
    slices: int = 0
    matrix: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise InvalidInput(f'unknown basis kind {self.kind!r}; expected one of {BASIS_KINDS}')
        if self.kind in ('polynomial', 'piecewise_polynomial') and self.degree < 1:
            raise InvalidInput(f'polynomial degree must be >= 1, got {self.degree}')
        if self.kind in ('slices', 'piecewise_polynomial') and self.slices < 2:
            raise InvalidInput(f'number of slices must be >= 2, got {self.slices}')
        if self.kind == 'custom':
            matrix = np.asarray(self.matrix, dtype=float)
            if matrix.ndim == 1:
                matrix = matrix[:, np.newaxis]
            if matrix.ndim != 2 or matrix.shape[1] < 1:
                raise InvalidInput('custom basis must be an n x r matrix with r >= 1')
            object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def polynomial(cls, degree):
        return cls('polynomial', degree=int(degree))

    @classmethod
    def slice_indicators(cls, h):
        return cls('slices', slices=int(h))

    @classmethod
    def categories(cls):
        return cls('categorical')

    @classmethod
    def piecewise_polynomial(cls, h, degree):
        return cls('piecewise_polynomial', degree=int(degree), slices=int(h))

    @classmethod
    def custom(cls, matrix):
        return cls('custom', matrix=matrix)

    def implied_r(self, n_levels=None):
        """Number of basis columns. Categorical bases need the number of labels."""
        if self.kind == 'polynomial':
            return self.degree
        if self.kind == 'slices':
            return self.slices - 1
        if self.kind == 'categorical':
            return None if n_levels is None else n_levels - 1
        if self.kind == 'piecewise_polynomial':
            return (self.slices - 1) + self.slices * self.degree
        return self.matrix.shape[1]


def parse_basis(text):
    """Parse a basis string: poly:k, slices:h, categorical or pwpoly:h:k."""
    parts = str(text).strip().lower().split(':')
    try:
        if parts[0] in ('poly', 'polynomial') and len(parts) == 2:
            return BasisSpec.polynomial(int(parts[1]))
        if parts[0] == 'slices' and len(parts) == 2:
            return BasisSpec.slice_indicators(int(parts[1]))
        if parts[0] == 'categorical' and len(parts) == 1:
            return BasisSpec.categories()
        if parts[0] == 'pwpoly' and len(parts) == 3:
            return BasisSpec.piecewise_polynomial(int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise InvalidInput(f'cannot parse basis {text!r}; use poly:k, slices:h, categorical or pwpoly:h:k')


########################################################################################################################
# csv ingestion

def _parse_numeric_column(frame, column):
    raw = frame[column]
    values = pd.to_numeric(raw.str.strip(), errors='coerce').to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad) > 0:
        i = int(bad[0])
        # header is line 1
        raise ParseError(f"row {i + 2}, column '{column}': cannot parse {raw.iloc[i]!r} as a finite number",
                         row=i + 2, column=column)
    return values


def read_table(path):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f'{path} is empty')
    except pd.errors.ParserError as e:
        raise ParseError(f'{path}: {e}')
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def load_csv(path, response_column, predictor_columns=None, categorical=None):
    """Read a headered CSV into a Dataset.

    :param path: csv file
    :param response_column: name of the response column
    :param predictor_columns: list of predictor names (default: every other column)
    :param categorical: force the response type; None infers it (mostly non-numeric cells -> categorical)
    """
    frame = read_table(path)
    if response_column not in frame.columns:
        raise SchemaError(f'response column {response_column!r} not found in {path} (columns: {list(frame.columns)})')
    if predictor_columns is None:
        predictor_columns = [c for c in frame.columns if c != response_column]
    predictor_columns = list(predictor_columns)
    missing = [c for c in predictor_columns if c not in frame.columns]
    if missing:
        raise SchemaError(f'predictor column(s) {missing} not found in {path}')
    if len(predictor_columns) == 0:
        raise SchemaError(f'{path} has no predictor columns')
    if len(frame) < 2:
        raise InvalidInput(f'{path} has {len(frame)} data rows; at least 2 are needed')

    X = np.column_stack([_parse_numeric_column(frame, c) for c in predictor_columns])

    raw_y = frame[response_column].str.strip()
    if categorical is None:
        # labels only when most filled cells are not numbers; a stray bad cell is a parse error below
        filled = raw_y[raw_y != '']
        numeric_like = pd.to_numeric(filled, errors='coerce').notna() | filled.str.lower().isin(['nan', '+nan', '-nan'])
        categorical = bool(len(filled) > 0 and (~numeric_like).sum() > len(filled) / 2)
    if categorical:
        empty = np.flatnonzero((raw_y == '').to_numpy())
        if len(empty) > 0:
            i = int(empty[0])
            raise ParseError(f"row {i + 2}, column '{response_column}': empty response label",
                             row=i + 2, column=response_column)
        y = raw_y.to_numpy(dtype=object)
    else:
        y = _parse_numeric_column(frame.assign(**{response_column: raw_y}), response_column)

    logger.info(f'Loaded {path}: n={X.shape[0]}, p={X.shape[1]}, '
                f'{"categorical" if categorical else "continuous"} response {response_column!r}')
    return Dataset(X=X, y=y, predictor_names=tuple(predictor_columns),
                   response_name=response_column, categorical=categorical)


def load_predictors(path, predictor_columns):
    """Predictor matrix (m x p) from a csv, in the given column order."""
    frame = read_table(path)
    missing = [c for c in predictor_columns if c not in frame.columns]
    if missing:
        raise SchemaError(f'predictor column(s) {missing} not found in {path}')
    return np.column_stack([_parse_numeric_column(frame, c) for c in predictor_columns])


########################################################################################################################
# f_y bases

def slice_labels(y, h):
    """Equal-count bin index (0..h-1) of every observation.

    Bins follow the stable sort of y; earlier bins take the extra observations when h does not
    divide n, and tied values at a boundary stay together in the earlier bin. When a long run of
    ties would leave later bins empty, their boundaries move forward so every bin keeps at least
    one distinct value.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    values, group, counts = np.unique(y, return_inverse=True, return_counts=True)
    n_groups = len(values)
    if n_groups < h:
        raise DegenerateResponse(f'{n_groups} distinct response values cannot fill {h} slices')
    sizes = np.full(h, n // h)
    sizes[: n % h] += 1
    bounds = np.cumsum(sizes)

    group_labels = np.empty(n_groups, dtype=int)
    k, filled = 0, 0
    for g in range(n_groups):
        group_labels[g] = k
        filled += counts[g]
        # the groups left must still cover the slices left
        if k < h - 1 and (filled >= bounds[k] or n_groups - g - 1 == h - k - 1):
            k += 1
    return group_labels[group.reshape(-1)]


def _require_continuous(y, kind):
    if y.dtype == object:
        raise InvalidInput(f'{kind} basis needs a continuous response; use --basis categorical')
    return y.astype(float)


def build_basis(y, spec):
    """Raw (uncentered) n x r basis matrix f_y."""
    y = np.asarray(y)
    n = len(y)

    if spec.kind == 'polynomial':
        yc = _require_continuous(y, 'polynomial')
        if len(np.unique(yc)) <= spec.degree:
            raise DegenerateResponse(f'{len(np.unique(yc))} distinct response values cannot support degree {spec.degree}')
        F = np.column_stack([yc ** j for j in range(1, spec.degree + 1)])

    elif spec.kind == 'slices':
        labels = slice_labels(_require_continuous(y, 'slices'), spec.slices)
        F = np.column_stack([(labels == k).astype(float) for k in range(spec.slices - 1)])

    elif spec.kind == 'categorical':
        levels = np.unique(y)
        if len(levels) < 2:
            raise DegenerateResponse('categorical response needs at least 2 distinct labels')
        # last label in sorted order is the reference category
        F = np.column_stack([(y == level).astype(float) for level in levels[:-1]])

    elif spec.kind == 'piecewise_polynomial':
        yc = _require_continuous(y, 'piecewise polynomial')
        labels = slice_labels(yc, spec.slices)
        columns = [(labels == k).astype(float) for k in range(spec.slices - 1)]
        for k in range(spec.slices):
            J = (labels == k).astype(float)
            columns += [J * yc ** j for j in range(1, spec.degree + 1)]
        F = np.column_stack(columns)

    else:
        F = spec.matrix
        if F.shape[0] != n:
            raise InvalidInput(f'custom basis has {F.shape[0]} rows for {n} observations')
        if not np.all(np.isfinite(F)):
            raise InvalidInput('custom basis has non-finite entries')
        if np.linalg.matrix_rank(F) < F.shape[1]:
            raise RankDeficientBasis(f'custom basis columns are linearly dependent (rank {np.linalg.matrix_rank(F)} < {F.shape[1]})')

    if n <= F.shape[1]:
        raise InvalidInput(f'n={n} observations cannot support r={F.shape[1]} basis columns')
    return F


########################################################################################################################
# design matrices

@dataclass(frozen=True, eq=False)
class DesignMatrices:
    Xc: np.ndarray
    Fc: np.ndarray
    Sigma: np.ndarray
    SigmaFit: np.ndarray
    SigmaRes: np.ndarray
    Bhat: np.ndarray
    x_mean: np.ndarray
    predictor_names: tuple = ()
    basis_kind: str = 'custom'

    @property
    def n(self):
        return self.Xc.shape[0]

    @property
    def p(self):
        return self.Xc.shape[1]

    @property
    def r(self):
        return self.Fc.shape[1]

    @property
    def m(self):
        """Number of possibly nonzero fitted eigenvalues, min(p, r)."""
        return min(self.p, self.r)

    @cached_property
    def sigma_res_sqrt(self):
        return matrixkit.sym_power(self.SigmaRes, 0.5)

    @cached_property
    def sigma_res_isqrt(self):
        return matrixkit.sym_power(self.SigmaRes, -0.5)

    @cached_property
    def pfc_spectrum(self):
        """Eigen-decomposition of Sigma_res^{-1/2} Sigma_fit Sigma_res^{-1/2}; entries beyond min(p, r) are exact zeros."""
        isqrt = self.sigma_res_isqrt
        eig = matrixkit.eig_sym_desc(isqrt @ self.SigmaFit @ isqrt)
        values = np.maximum(eig.values, 0.0)
        values[self.m:] = 0.0
        return matrixkit.SymEigen(values=values, vectors=eig.vectors)

    @cached_property
    def canonical_correlations(self):
        """Sample canonical correlations between the predictors and f_y, descending, length min(p, r)."""
        return canonical_correlations(self.Xc, self.Fc)

    @cached_property
    def logdet_sigma_res(self):
        sign, logdet = np.linalg.slogdet(self.SigmaRes)
        if sign <= 0:
            raise ResidualCovSingular('Sigma_res is not positive definite')
        return logdet

    def select(self, indices):
        """Design restricted to a subset of predictors (the regression on f_y is column by column)."""
        idx = np.asarray(indices, dtype=int)
        if idx.ndim != 1 or len(idx) == 0 or len(np.unique(idx)) != len(idx) or idx.min() < 0 or idx.max() >= self.p:
            raise InvalidInput(f'invalid predictor subset {list(indices)} for p={self.p}')
        ix = np.ix_(idx, idx)
        return replace(self, Xc=self.Xc[:, idx], Sigma=self.Sigma[ix], SigmaFit=self.SigmaFit[ix],
                       SigmaRes=self.SigmaRes[ix], Bhat=self.Bhat[idx], x_mean=self.x_mean[idx],
                       predictor_names=tuple(self.predictor_names[i] for i in idx) if self.predictor_names else ())


def canonical_correlations(A, B):
    """Canonical correlations between the columns of two centered matrices via QR and SVD."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    s = linalg.svd(qa.T @ qb, compute_uv=False)
    return np.clip(s[: min(A.shape[1], B.shape[1])], 0.0, 1.0)


def build_design(data, spec):
    """Center the data, regress X on f_y and form the moment matrices."""
    F = build_basis(data.y, spec)
    if spec.kind == 'polynomial':
        sd = F.std(axis=0)
        if np.any(sd == 0):
            raise DegenerateResponse('polynomial basis column has zero variance')
        F = F / sd

    n, p = data.X.shape
    r = F.shape[1]
    if n <= p + r:
        raise ResidualCovSingular(f'n={n} must exceed p + r = {p + r} for Sigma_res to be nonsingular; '
                                  f'reduce r or use a structured Delta')

    x_mean = data.X.mean(axis=0)
    Xc = data.X - x_mean
    Fc = F - F.mean(axis=0)
    if np.linalg.matrix_rank(Fc) < r:
        raise RankDeficientBasis(f'centered basis has rank {np.linalg.matrix_rank(Fc)} < r={r}')

    # least squares solve of Fc Z = Xc instead of forming P_F
    coef, _, _, _ = linalg.lstsq(Fc, Xc)
    fitted = Fc @ coef
    Sigma = Xc.T @ Xc / n
    Sigma = (Sigma + Sigma.T) / 2
    SigmaFit = fitted.T @ fitted / n
    SigmaFit = (SigmaFit + SigmaFit.T) / 2
    SigmaRes = Sigma - SigmaFit

    lam_sigma = linalg.eigvalsh(Sigma)
    lam_res = linalg.eigvalsh(SigmaRes)
    if lam_sigma[-1] <= 0 or lam_res[0] <= RES_SPD_TOL * lam_sigma[-1]:
        raise ResidualCovSingular(f'Sigma_res is not positive definite (smallest eigenvalue {lam_res[0]:.3e}); '
                                  f'reduce r, drop constant or collinear predictors, or use a structured Delta')

    logger.debug(f'design: n={n}, p={p}, r={r}, basis={spec.kind}')
    return DesignMatrices(Xc=Xc, Fc=Fc, Sigma=Sigma, SigmaFit=SigmaFit, SigmaRes=SigmaRes,
                          Bhat=coef.T, x_mean=x_mean, predictor_names=data.predictor_names,
                          basis_kind=spec.kind)
