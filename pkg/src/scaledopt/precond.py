"""Momentum-updated preconditioners.

The scaling matrix evolves as a convex combination of its previous value and
a fresh curvature estimate:

    P_{t+1} = beta_{t+1} P_t + (1 - beta_{t+1}) d_{t+1},      P_0 = I

where d is one of four update terms, named by what it measures:

* ``identity-frozen``      P stays the identity; no curvature is estimated.
* ``diagonal-hutchinson``  positive truncation of the probe z * (H z).
* ``diagonal-exact``       positive truncation of the exact Hessian diagonal.
* ``dense-absolute``       eigenvalue map lambda -> max(|lambda|, eps) of the
                           dense batch Hessian.

Positive truncation (entrywise or spectral) keeps every update term at or
above the eps floor, and convex combinations preserve that, so P stays safely
invertible for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import SeededRng
from .linalg import (
    EPS_FLOOR,
    DenseSPDPreconditioner,
    DiagonalPreconditioner,
    Preconditioner,
    eig_sym,
)
from .objective import LogisticProblem

KINDS = ("identity-frozen", "diagonal-hutchinson", "diagonal-exact", "dense-absolute")

__all__ = [
    "KINDS",
    "PreconditionerState",
    "truncate_positive",
    "momentum_update",
    "update_term",
    "hutchinson_step",
    "dense_step",
]


@dataclass(frozen=True)
class PreconditionerState:
    """Current scaling matrix plus the policy that updates it."""

    P: Preconditioner
    kind: str
    eps: float = EPS_FLOOR

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {self.kind!r}; expected one of {KINDS}")
        if self.eps <= 0:
            raise ValueError("eps floor must be positive")
        dense = isinstance(self.P, DenseSPDPreconditioner)
        if self.kind == "dense-absolute" and not dense:
            raise ValueError("dense-absolute requires a dense preconditioner")
        if self.kind in ("diagonal-hutchinson", "diagonal-exact", "identity-frozen") and dense:
            raise ValueError(f"{self.kind} requires a diagonal preconditioner")

    @classmethod
    def initial(cls, n: int, kind: str, eps: float = EPS_FLOOR) -> "PreconditionerState":
        """Identity start in the representation the kind needs."""
        if kind == "dense-absolute":
            return cls(DenseSPDPreconditioner.identity(n), kind, eps)
        return cls(DiagonalPreconditioner.identity(n), kind, eps)


def truncate_positive(raw, eps: float = EPS_FLOOR) -> Preconditioner:
    """Map a raw curvature estimate into the SPD cone.

    Vectors go entrywise through max(|.|, eps); square matrices keep their
    eigenvectors and push each eigenvalue through the same map.
    """
    if eps <= 0:
        raise ValueError("eps floor must be positive")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        return DiagonalPreconditioner(np.maximum(np.abs(raw), eps), eps_floor=eps)
    if raw.ndim == 2:
        w, V = eig_sym(raw, return_vectors=True)
        if w[0] >= eps:
            # already inside the cone: the map is the identity there, so keep
            # the input untouched instead of a lossy reassembly
            return DenseSPDPreconditioner(0.5 * (raw + raw.T), eps_floor=eps)
        w = np.maximum(np.abs(w), eps)
        M = (V * w) @ V.T
        return DenseSPDPreconditioner(0.5 * (M + M.T), eps_floor=eps)
    raise ValueError(f"expected a vector or square matrix, got ndim={raw.ndim}")


def momentum_update(state: PreconditionerState, d: Preconditioner, beta: float) -> PreconditionerState:
    """Convex combination beta * P + (1 - beta) * d, as a new state."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if d.n != state.P.n:
        raise ValueError("update term dimension mismatch")
    if state.kind == "identity-frozen":
        raise ValueError("identity-frozen preconditioner takes no updates")
    if isinstance(state.P, DiagonalPreconditioner):
        if not isinstance(d, DiagonalPreconditioner):
            raise ValueError("diagonal state needs a diagonal update term")
        new_diag = beta * state.P.diag + (1.0 - beta) * d.diag
        # both operands are floored, so the combination is too; the maximum
        # only shields against rounding at the floor itself
        new_diag = np.maximum(new_diag, state.eps)
        return replace(state, P=DiagonalPreconditioner(new_diag, eps_floor=state.eps))
    if not isinstance(d, DenseSPDPreconditioner):
        raise ValueError("dense state needs a dense update term")
    M = beta * state.P.matrix + (1.0 - beta) * d.matrix
    return replace(state, P=DenseSPDPreconditioner(M, eps_floor=state.eps))


def update_term(
    state: PreconditionerState,
    prob: LogisticProblem,
    x: np.ndarray,
    rng_probe: SeededRng | None = None,
    batch=None,
    dense_cap: int | None = None,
):
    """Fresh curvature estimate d for the current point, per the state's kind.

    Returns ``(d, raw)`` where ``raw`` is the untruncated sample (the probe
    product for Hutchinson, the exact diagonal, or the dense batch Hessian).
    identity-frozen returns ``(None, None)`` and consumes no randomness.
    """
    if state.kind == "identity-frozen":
        return None, None
    if state.kind == "diagonal-hutchinson":
        if rng_probe is None:
            raise ValueError("hutchinson update needs a probe rng")
        z = rng_probe.rademacher(prob.n)
        raw = prob.hutchinson_sample(x, z, batch=batch)
        return truncate_positive(raw, state.eps), raw
    if state.kind == "diagonal-exact":
        raw = prob.hessian_diag(x, batch=batch)
        return truncate_positive(raw, state.eps), raw
    # dense-absolute
    kwargs = {} if dense_cap is None else {"cap": dense_cap}
    raw = prob.full_hessian(x, batch=batch, **kwargs)
    return truncate_positive(raw, state.eps), raw


def hutchinson_step(
    state: PreconditionerState,
    prob: LogisticProblem,
    x: np.ndarray,
    beta: float,
    rng_probe: SeededRng,
    batch=None,
) -> PreconditionerState:
    """One probe draw + truncation + momentum update, for diagonal states."""
    if state.kind != "diagonal-hutchinson":
        raise ValueError(f"hutchinson_step needs a diagonal-hutchinson state, got {state.kind!r}")
    d, _ = update_term(state, prob, x, rng_probe=rng_probe, batch=batch)
    return momentum_update(state, d, beta)


def dense_step(
    state: PreconditionerState,
    prob: LogisticProblem,
    x: np.ndarray,
    beta: float,
    batch=None,
    dense_cap: int | None = None,
) -> PreconditionerState:
    """Batch-Hessian absolute-value update for dense states."""
    if state.kind != "dense-absolute":
        raise ValueError(f"dense_step needs a dense-absolute state, got {state.kind!r}")
    d, _ = update_term(state, prob, x, batch=batch, dense_cap=dense_cap)
    return momentum_update(state, d, beta)
