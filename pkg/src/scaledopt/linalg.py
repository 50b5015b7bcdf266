"""Preconditioner types and the small dense/diagonal linear algebra behind them.

A preconditioner here is a symmetric positive definite scaling matrix P.
It always acts through its inverse (steps move along P^{-1} g) and through
the two norms it induces:

    ||x||_P^2  = <P x, x>         (primal)
    ||s||_P*^2 = <s, P^{-1} s>    (dual, used for gradients)

Two representations are supported: a strictly positive diagonal, and a dense
SPD matrix with a cached Cholesky factor. Both enforce an eigenvalue floor so
inverses stay bounded.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

# Minimum eigenvalue / diagonal entry tolerated in any preconditioner.
EPS_FLOOR = 1e-8

__all__ = [
    "EPS_FLOOR",
    "DiagonalPreconditioner",
    "DenseSPDPreconditioner",
    "apply_inverse",
    "norm_sq",
    "dual_norm_sq",
    "eig_sym",
    "scaled_hessian_spectrum",
    "pencil_extremes",
]


def _as_vector(v, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ValueError(f"dimension mismatch: expected length {n}, got {v.shape[0]}")
    return v


def _check_symmetric(M: np.ndarray, rtol: float, what: str) -> np.ndarray:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{what} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{what} has non-finite entries")
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(M - M.T) > rtol * scale:
        raise ValueError(f"{what} is not symmetric within {rtol:g} relative")
    # symmetrize exactly so downstream LAPACK calls see a clean input
    return 0.5 * (M + M.T)


class DiagonalPreconditioner:
    """Strictly positive diagonal scaling matrix.

    Every entry must sit at or above ``eps_floor``; the momentum update and
    the positive-truncation map guarantee this for matrices they produce.
    """

    __slots__ = ("diag",)

    def __init__(self, diag, eps_floor: float = EPS_FLOOR):
        d = _as_vector(diag)
        if d.size == 0:
            raise ValueError("empty diagonal")
        if not np.all(np.isfinite(d)):
            raise ValueError("diagonal entries must be finite")
        if np.any(d < eps_floor) or np.any(d <= 0.0):
            raise ValueError(
                f"diagonal entries must be >= eps floor {eps_floor:g}; "
                f"min entry {d.min():g}"
            )
        self.diag = d

    @classmethod
    def identity(cls, n: int) -> "DiagonalPreconditioner":
        return cls(np.ones(n))

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def min_eigenvalue(self) -> float:
        return float(self.diag.min())

    def max_eigenvalue(self) -> float:
        return float(self.diag.max())

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    def __repr__(self) -> str:  # pragma: no cover
        return f"DiagonalPreconditioner(n={self.n}, min={self.diag.min():.3g}, max={self.diag.max():.3g})"


class DenseSPDPreconditioner:
    """Dense symmetric positive definite scaling matrix.

    Validates symmetry to 1e-12 relative and an eigenvalue floor at
    construction, and caches a Cholesky factor for inverse applications.
    """

    __slots__ = ("matrix", "eigenvalues", "_chol")

    def __init__(self, matrix, eps_floor: float = EPS_FLOOR):
        M = np.asarray(matrix, dtype=np.float64)
        M = _check_symmetric(M, 1e-12, "preconditioner matrix")
        w = np.linalg.eigvalsh(M)
        # slack at the reconstruction-rounding level: eigenvalue maps and convex
        # combinations of floored matrices can land a few ulps of ||M|| below
        # the floor without being meaningfully indefinite
        slack = 1e-10 * max(1.0, abs(w[-1]), abs(w[0]))
        if w[0] < eps_floor - slack:
            raise ValueError(
                f"matrix is not positive definite above the eps floor "
                f"{eps_floor:g}: min eigenvalue {w[0]:g}"
            )
        self.matrix = M
        self.eigenvalues = w  # ascending
        self._chol = scipy.linalg.cho_factor(M, lower=True)

    @classmethod
    def identity(cls, n: int) -> "DenseSPDPreconditioner":
        return cls(np.eye(n))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])

    def as_matrix(self) -> np.ndarray:
        return self.matrix

    def cholesky_lower(self) -> np.ndarray:
        return np.tril(self._chol[0])

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"DenseSPDPreconditioner(n={self.n}, "
            f"lambda_min={self.eigenvalues[0]:.3g}, lambda_max={self.eigenvalues[-1]:.3g})"
        )


Preconditioner = DiagonalPreconditioner | DenseSPDPreconditioner


def apply_inverse(P: Preconditioner, v) -> np.ndarray:
    """Solve P u = v for u."""
    v = _as_vector(v, P.n)
    if isinstance(P, DiagonalPreconditioner):
        return v / P.diag
    return scipy.linalg.cho_solve(P._chol, v)


def norm_sq(P: Preconditioner, x) -> float:
    """Squared primal norm <P x, x>."""
    x = _as_vector(x, P.n)
    if isinstance(P, DiagonalPreconditioner):
        return float(np.dot(P.diag * x, x))
    return float(x @ (P.matrix @ x))


def dual_norm_sq(P: Preconditioner, s) -> float:
    """Squared dual norm <s, P^{-1} s>."""
    s = _as_vector(s, P.n)
    if isinstance(P, DiagonalPreconditioner):
        return float(np.dot(s / P.diag, s))
    # <s, P^{-1} s> = ||L^{-1} s||^2 with P = L L^T, cheaper and more stable
    # than forming the full solve then dotting
    c, lower = P._chol
    y = scipy.linalg.solve_triangular(c, s, lower=lower, check_finite=False)
    return float(np.dot(y, y))


def eig_sym(A, return_vectors: bool = False):
    """Eigenvalues (ascending) of a symmetric matrix; optionally vectors too.

    The input must be symmetric to 1e-10 relative; it is symmetrized before
    the LAPACK call so residuals are measured against a clean matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    A = _check_symmetric(A, 1e-10, "matrix")
    if return_vectors:
        w, V = np.linalg.eigh(A)
        return w, V
    return np.linalg.eigvalsh(A)


def scaled_hessian_spectrum(H, P: Preconditioner) -> np.ndarray:
    """Eigenvalues (ascending) of P^{-1/2} H P^{-1/2}.

    Same spectrum as H P^{-1} but computed on a symmetric matrix: by
    congruence through P^{1/2} (diagonal) or the Cholesky factor (dense).
    """
    H = np.asarray(H, dtype=np.float64)
    H = _check_symmetric(H, 1e-10, "hessian")
    if H.shape[0] != P.n:
        raise ValueError(f"dimension mismatch: hessian {H.shape[0]}, preconditioner {P.n}")
    if isinstance(P, DiagonalPreconditioner):
        s = 1.0 / np.sqrt(P.diag)
        B = H * s[:, None] * s[None, :]
    else:
        c, lower = P._chol
        L = np.tril(c) if lower else np.triu(c).T
        # B = L^{-1} H L^{-T}
        Y = scipy.linalg.solve_triangular(L, H, lower=True, check_finite=False)
        B = scipy.linalg.solve_triangular(L, Y.T, lower=True, check_finite=False).T
    return np.linalg.eigvalsh(0.5 * (B + B.T))


def pencil_extremes(A: Preconditioner, B: Preconditioner) -> tuple[float, float]:
    """Extreme eigenvalues (min, max) of B^{-1/2} A B^{-1/2} for preconditioners A, B."""
    if A.n != B.n:
        raise ValueError("dimension mismatch between pencil operands")
    if isinstance(A, DiagonalPreconditioner) and isinstance(B, DiagonalPreconditioner):
        r = A.diag / B.diag
        return float(r.min()), float(r.max())
    w = scaled_hessian_spectrum(A.as_matrix(), B)
    return float(w[0]), float(w[-1])
