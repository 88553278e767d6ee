"""Symmetric positive-definite matrix kernel.

Everything downstream passes plain ``numpy`` arrays around; the helpers here
enforce symmetry, certify definiteness, and compute the affine-invariant
Riemannian distance used to measure how far two Riccati iterates are apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NotPositiveDefiniteError

TOL_SYM = 1e-9
PD_REL_MARGIN = 1e-10


def symmetrize(M, tol=TOL_SYM):
    """Return ``(M + M.T) / 2`` after checking the asymmetry is only round-off."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"expected a square matrix, got shape {M.shape}")
    scale = 1.0 + np.max(np.abs(M), initial=0.0)
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise InputError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def eig_bounds(M):
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def is_pd(M, rel=PD_REL_MARGIN):
    """Scale-free strict definiteness test: ``lambda_min > rel * lambda_max``."""
    lo, hi = eig_bounds(M)
    return hi > 0.0 and lo > rel * hi


@dataclass(frozen=True)
class SpdMatrix:
    """A symmetric matrix together with its certified extreme eigenvalues."""

    M: np.ndarray
    eig_min: float
    eig_max: float

    @classmethod
    def from_array(cls, M, strict=True, tol=TOL_SYM):
        M = symmetrize(M, tol)
        lo, hi = eig_bounds(M)
        if strict and not (hi > 0.0 and lo > PD_REL_MARGIN * hi):
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (eigenvalues in [{lo:.3e}, {hi:.3e}])"
            )
        if not strict and lo < -tol * (1.0 + abs(hi)):
            raise NotPositiveDefiniteError(f"matrix is not positive semidefinite (min eigenvalue {lo:.3e})")
        M.setflags(write=False)
        return cls(M, lo, hi)

    @property
    def n(self):
        return self.M.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.M if dtype is None else self.M.astype(dtype)


def _as_pd(X, name="matrix"):
    X = symmetrize(X)
    w, V = np.linalg.eigh(X)
    if not (w[-1] > 0.0 and w[0] > PD_REL_MARGIN * w[-1]):
        raise NotPositiveDefiniteError(f"{name} is not positive definite (min eigenvalue {w[0]:.3e})")
    return w, V


def spd_sqrt(X):
    w, V = _as_pd(X)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def psd_sqrt(X, tol=TOL_SYM):
    """Square root of a positive semidefinite matrix (tiny negative eigenvalues clipped)."""
    X = symmetrize(X)
    w, V = np.linalg.eigh(X)
    if w[0] < -tol * (1.0 + abs(w[-1])):
        raise NotPositiveDefiniteError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (S + S.T)


def spd_inverse(X):
    X = symmetrize(X)
    try:
        c = sla.cho_factor(X)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    Y = sla.cho_solve(c, np.eye(X.shape[0]))
    return 0.5 * (Y + Y.T)


def sym_solve(X, b):
    """Solve ``X y = b`` for symmetric positive-definite ``X`` via Cholesky."""
    X = symmetrize(X)
    try:
        c = sla.cho_factor(X)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    return sla.cho_solve(c, np.asarray(b, dtype=float))


def relative_eigenvalues(X, P):
    """Spectrum of ``X P^{-1}``, computed from the symmetric pencil (X, P)."""
    X = symmetrize(X)
    P = symmetrize(P)
    if X.shape != P.shape:
        raise InputError(f"dimension mismatch {X.shape} vs {P.shape}")
    _as_pd(X, "first argument")
    _as_pd(P, "second argument")
    return sla.eigh(X, P, eigvals_only=True)


def riemannian_distance(X, P):
    """Affine-invariant distance ``sqrt(sum(log(lambda_i)**2))`` over the spectrum of X P^-1."""
    if np.array_equal(X, P):
        _as_pd(symmetrize(X))
        return 0.0
    lam = relative_eigenvalues(X, P)
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def ordering_lt(X, Y, margin=0.0):
    """True iff ``X < Y`` in the Loewner order, i.e. ``lambda_min(Y - X) > margin``."""
    D = symmetrize(np.asarray(Y, dtype=float) - np.asarray(X, dtype=float))
    return bool(np.linalg.eigvalsh(D)[0] > margin)
