# dense symmetric-matrix kernels used by every other module:
# ordered eigendecomposition, matrix powers, S_d(A, B) subspaces, principal angles, chi-square tails

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from exceptions import InvalidInput, SingularMatrix, NotPSD

logger = logging.getLogger(__name__)

# eigenvalues in [-PSD_CLIP_TOL * lambda_max, 0] are treated as exact zeros
PSD_CLIP_TOL = 1e-10
# adjacent eigenvalues closer than this (relative to the spectral radius) are reported as ties
GAP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SymEigen:
    values: np.ndarray   # descending
    vectors: np.ndarray  # column j pairs with values[j]

    @property
    def p(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class Subspace:
    dim: int
    basis: np.ndarray  # p x dim, orthonormal columns

    @property
    def p(self):
        return self.basis.shape[0]

    def projection(self):
        return self.basis @ self.basis.T


def _as_square(A, name='matrix'):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f'{name} must be square, got shape {A.shape}')
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f'{name} has non-finite entries')
    return A


def fix_signs(vectors):
    """Flip columns so that the entry of largest absolute value is nonnegative.

    Entries equal to the column maximum up to rounding count as ties and the lowest index wins.
    """
    vectors = np.array(vectors, dtype=float)
    if vectors.size == 0:
        return vectors
    absv = np.abs(vectors)
    colmax = absv.max(axis=0)
    lead = np.argmax(absv >= colmax * (1 - 1e-10), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_sym_desc(A):
    """Eigendecomposition of a symmetric matrix with eigenvalues in descending order.

    :param A: symmetric p x p matrix (symmetrized as (A + A^T)/2 before decomposing)
    :return: SymEigen with sign-normalized eigenvectors
    """
    A = _as_square(A)
    A = (A + A.T) / 2
    values, vectors = linalg.eigh(A)
    values = values[::-1].copy()
    vectors = fix_signs(vectors[:, ::-1])
    return SymEigen(values=values, vectors=vectors)


def degenerate_gaps(values, count=None):
    """Indices i where values[i] - values[i+1] collapses below GAP_TOL * spectral radius.

    Only the first `count` values take part (e.g. the nonzero part of a PFC spectrum).
    """
    values = np.asarray(values, dtype=float)
    if count is not None:
        values = values[:count]
    if len(values) < 2:
        return []
    radius = np.max(np.abs(values))
    if radius == 0:
        return list(range(len(values) - 1))
    gaps = values[:-1] - values[1:]
    return [int(i) for i in np.flatnonzero(gaps < GAP_TOL * radius)]


def _clipped_values(eig, tol=PSD_CLIP_TOL):
    values = eig.values.copy()
    lam_max = max(values[0], 0.0)
    if values[-1] < -tol * lam_max or (lam_max == 0 and values[-1] < 0):
        raise NotPSD(f'matrix is not positive semidefinite (smallest eigenvalue {values[-1]:.3e})')
    values[values < 0] = 0.0
    return values, lam_max


def sym_power(A, exponent, tol=PSD_CLIP_TOL):
    """V diag(values**exponent) V^T for a symmetric PSD matrix.

    Negative exponents require the smallest eigenvalue to exceed tol * largest eigenvalue.
    """
    eig = eig_sym_desc(A)
    values, lam_max = _clipped_values(eig, tol)
    if exponent < 0 and (lam_max == 0 or values[-1] <= tol * lam_max):
        raise SingularMatrix(f'matrix is singular at tolerance {tol:g} '
                             f'(eigenvalues {values[-1]:.3e} .. {lam_max:.3e})')
    if exponent == 0:
        powered = np.ones_like(values)
    else:
        powered = values ** exponent
    out = (eig.vectors * powered) @ eig.vectors.T
    return (out + out.T) / 2


def orthonormalize(M):
    """Orthonormal basis (QR) of the column span of M with the sign convention applied."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, np.newaxis]
    q, _ = np.linalg.qr(M)
    return fix_signs(q)


def sd_subspace(A, B, d):
    """S_d(A, B): span of A^{-1/2} times the first d eigenvectors of A^{-1/2} B A^{-1/2}."""
    A = _as_square(A, 'A')
    B = _as_square(B, 'B')
    p = A.shape[0]
    if B.shape != A.shape:
        raise InvalidInput(f'A and B differ in shape: {A.shape} vs {B.shape}')
    if not (1 <= int(d) <= p):
        raise InvalidInput(f'subspace dimension d={d} outside 1..{p}')
    a_isqrt = sym_power(A, -0.5)
    eig = eig_sym_desc(a_isqrt @ B @ a_isqrt)
    basis = orthonormalize(a_isqrt @ eig.vectors[:, :d])
    return Subspace(dim=int(d), basis=basis)


def principal_angles(S1, S2):
    """Principal angles (radians, ascending) between two subspaces of equal dimension."""
    if S1.dim != S2.dim or S1.p != S2.p:
        raise InvalidInput(f'subspaces differ: dim {S1.dim} in R^{S1.p} vs dim {S2.dim} in R^{S2.p}')
    # sine/cosine combined formula, accurate for both small and near-right angles
    angles = linalg.subspace_angles(S1.basis, S2.basis)
    return np.clip(np.sort(angles), 0.0, np.pi / 2)


def largest_angle_deg(S1, S2):
    return float(np.degrees(principal_angles(S1, S2)[-1]))


def chi2_sf(x, df):
    """Upper tail probability of chi-square(df) via the regularized incomplete gamma function."""
    if df != int(df) or df < 1:
        raise InvalidInput(f'chi-square degrees of freedom must be a positive integer, got {df}')
    if not np.isfinite(x) or x < 0:
        raise InvalidInput(f'chi-square statistic must be a finite nonnegative number, got {x}')
    if x == 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))
