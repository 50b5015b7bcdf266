"""Finite-sum binary logistic regression on a sparse dataset.

The objective is the mean over rows of log(1 + exp(-b_i <a_i, x>)) where a_i
is the (already scaled) feature row and b_i in {-1,+1}. Values use logaddexp
and gradients use the logistic sigmoid of the negated margin, so nothing
overflows for any margin magnitude.

Curvature comes in four flavors, each computable on a minibatch or the full
dataset: the exact Hessian diagonal, Hessian-vector products, the Hutchinson
diagonal probe z * (H z) with Rademacher z, and (for small dimensions) the
dense Hessian itself.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import Dataset, SeededRng

# Dense Hessians are O(m n^2); refuse silently huge ones.
DENSE_HESSIAN_CAP = 512

__all__ = ["LogisticProblem", "DENSE_HESSIAN_CAP"]


def _power_iteration_sq_norm(X: sp.csr_matrix, tol: float = 1e-7, max_iter: int = 10000) -> float:
    """Largest eigenvalue of X^T X by power iteration, to ~tol relative."""
    n = X.shape[1]
    if X.nnz == 0:
        return 0.0
    # deterministic generic start; a fixed gaussian vector has a component on
    # the top eigenspace with probability 1
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0x5CA1ED)))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # landed in the null space: reseed once from a shifted draw
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
        lam = float(v @ (X.T @ (X @ v)))
        if abs(lam - lam_prev) <= tol * max(lam, 1e-300):
            return lam
        lam_prev = lam
    return lam_prev


class LogisticProblem:
    """Mean logistic loss over a :class:`Dataset`, with curvature oracles."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.X = dataset.features.tocsr()
        self.b = dataset.labels.astype(np.float64)
        self.m, self.n = self.X.shape
        self._X_sq = None
        self._spectral_norm = None

    # -- helpers -----------------------------------------------------------

    def _rows(self, batch):
        """(X_B, b_B, count) for a batch of row indices, or the full data."""
        if batch is None:
            return self.X, self.b, self.m
        batch = np.asarray(batch, dtype=np.int64)
        if batch.ndim != 1 or batch.size == 0:
            raise ValueError("batch must be a non-empty 1-d index array")
        if np.any(batch < 0) or np.any(batch >= self.m):
            raise ValueError("batch index out of range")
        return self.X[batch], self.b[batch], batch.size

    def _margins(self, X, b, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.n},)")
        return b * (X @ x)

    @property
    def x_sq(self) -> sp.csr_matrix:
        if self._X_sq is None:
            X2 = self.X.copy()
            X2.data = X2.data**2
            self._X_sq = X2
        return self._X_sq

    # -- zeroth and first order --------------------------------------------

    def value(self, x) -> float:
        """Full objective f(x); overflow-free for any margin."""
        margins = self._margins(self.X, self.b, x)
        return float(np.mean(np.logaddexp(0.0, -margins)))

    def grad(self, x, batch=None) -> np.ndarray:
        """Mean gradient over the batch (full dataset when batch is None)."""
        X, b, count = self._rows(batch)
        margins = self._margins(X, b, x)
        # d/dm log(1+e^{-m}) = -sigmoid(-m); chain rule brings -b a_i
        coeff = -b * expit(-margins)
        return (X.T @ coeff) / count

    # -- curvature ----------------------------------------------------------

    def _hessian_weights(self, X, b, x) -> np.ndarray:
        margins = self._margins(X, b, x)
        s = expit(-margins)
        return s * (1.0 - s)  # = sigmoid(m) sigmoid(-m), label sign drops out

    def hessian_diag(self, x, batch=None) -> np.ndarray:
        """Exact diagonal of the batch Hessian."""
        X, b, count = self._rows(batch)
        w = self._hessian_weights(X, b, x)
        if batch is None:
            X2 = self.x_sq
        else:
            X2 = X.copy()
            X2.data = X2.data**2
        return (X2.T @ w) / count

    def hvp(self, x, v, batch=None) -> np.ndarray:
        """Hessian-vector product via two sparse matvecs; never forms H."""
        X, b, count = self._rows(batch)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.n},)")
        w = self._hessian_weights(X, b, x)
        return (X.T @ (w * (X @ v))) / count

    def hutchinson_sample(self, x, z, batch=None) -> np.ndarray:
        """Diagonal probe z * (H z); unbiased for diag(H) over Rademacher z."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.n,):
            raise ValueError(f"probe has shape {z.shape}, expected ({self.n},)")
        if not np.all(np.abs(z) == 1.0):
            raise ValueError("probe vector must have +-1 entries")
        return z * self.hvp(x, z, batch=batch)

    def full_hessian(self, x, batch=None, cap: int = DENSE_HESSIAN_CAP) -> np.ndarray:
        """Dense batch Hessian; refuses n > cap."""
        if self.n > cap:
            raise ValueError(f"dense hessian refused for n={self.n} > cap {cap}")
        X, b, count = self._rows(batch)
        w = self._hessian_weights(X, b, x)
        H = (X.multiply(w[:, None])).T @ X / count
        H = np.asarray(H.todense())
        return 0.5 * (H + H.T)

    # -- global smoothness ---------------------------------------------------

    def _spectral(self) -> float:
        if self._spectral_norm is None:
            self._spectral_norm = float(np.sqrt(_power_iteration_sq_norm(self.X)))
        return self._spectral_norm

    def global_lipschitz(self) -> float:
        """Smoothness constant ||X||_2 / 4 used to cap local estimates."""
        return 0.25 * self._spectral()

    def global_lipschitz_normalized(self) -> float:
        """Mean-form curvature bound ||X||_2^2 / (4 m); tight for the mean loss."""
        return 0.25 * self._spectral() ** 2 / self.m
