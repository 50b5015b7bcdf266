"""Numerical verification of the preconditioner inexactness theory.

Every function here measures something the adaptive rules only assume:
how far the scaling matrix sits from the true curvature (``inexactness``),
whether a single step's guaranteed-descent bound actually holds
(``descent_residual``), how the dual-norm variance penalty propagates
(``variance_penalty_check``), and how local smoothness estimates aggregate
(``harmonic_average``). They are pure observers; nothing in the optimizer
depends on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaptive import TheoryParams, kappa_chi
from .linalg import (
    DenseSPDPreconditioner,
    DiagonalPreconditioner,
    Preconditioner,
    apply_inverse,
    dual_norm_sq,
    pencil_extremes,
    scaled_hessian_spectrum,
)
from .objective import LogisticProblem

__all__ = [
    "InexactnessReport",
    "inexactness",
    "StepSnapshot",
    "descent_residual",
    "descent_residuals",
    "harmonic_average",
    "RateSummary",
    "variance_penalty_check",
    "delta_plus_recursion",
    "hutchinson_bound_check",
    "variance_multiplier",
    "variance_multiplier_worst_case",
    "spectrum_rows",
]


@dataclass(frozen=True)
class InexactnessReport:
    """Measured gaps between curvature, its estimate, and the scaling matrix."""

    Delta: float          # lambda_max(H P^{-1}) - 1
    sigma_emp: float      # [lambda_max(H d^{-1}) - 1]_+
    delta_plus: float     # [lambda_max(P d^{-1}) - 1]_+
    delta_minus: float    # [1 - lambda_min(P d^{-1})]_+
    kappa: float
    chi: float
    lambda_min_scaled: float
    lambda_max_scaled: float


def inexactness(
    prob: LogisticProblem,
    x: np.ndarray,
    P: Preconditioner,
    d: Preconditioner,
    batch=None,
) -> InexactnessReport:
    """Measure all inexactness quantities at one point.

    ``P`` is the standing scaling matrix and ``d`` the fresh update term it is
    being compared against (pass the same object twice to compare P with
    itself). The Hessian is the batch Hessian at ``x`` (full dataset when
    batch is None), formed densely.
    """
    H = prob.full_hessian(x, batch=batch)
    scaled = scaled_hessian_spectrum(H, P)
    against_d = scaled_hessian_spectrum(H, d)
    lo, hi = pencil_extremes(P, d)
    kappa, chi = kappa_chi(P, d)
    return InexactnessReport(
        Delta=float(scaled[-1] - 1.0),
        sigma_emp=max(float(against_d[-1] - 1.0), 0.0),
        delta_plus=max(hi - 1.0, 0.0),
        delta_minus=max(1.0 - lo, 0.0),
        kappa=kappa,
        chi=chi,
        lambda_min_scaled=float(scaled[0]),
        lambda_max_scaled=float(scaled[-1]),
    )


@dataclass(frozen=True)
class StepSnapshot:
    """Everything needed to replay one optimizer step for verification."""

    x: np.ndarray
    g: np.ndarray
    eta: float
    P: Preconditioner
    beta_t: float      # coefficient that built P from its predecessor
    beta_next: float   # coefficient applied right after this step
    kappa: float       # coupling of P's predecessor vs the update term in P
    chi: float


def descent_residual(
    prob: LogisticProblem,
    x: np.ndarray,
    g: np.ndarray,
    eta: float,
    P: Preconditioner,
    beta_t: float,
    beta_next: float,
    kappa: float,
    chi: float,
    params: TheoryParams,
) -> float:
    """Guaranteed-descent bound minus the realized next value (>= 0 if the bound holds).

    The bound majorizes f after one step x - eta P^{-1} g by

        f(x) - (eta/2) ||grad||_*^2
             + (eta/2) (X^2 + X - 1) ||g||_*^2
             + (eta/2) (1 + pen) ||g - grad||_*^2
             + (M' eta^3 / 6) ((1+sigma)/(1 - beta_t chi))^{3/2} ||g||_*^3

    with X = eta (1+sigma) / (1 - beta_t chi) and the variance penalty
    pen = (1 - beta_next) beta_t kappa / (1 + beta_t beta_next kappa).
    All norms are dual norms of P.
    """
    one_minus = 1.0 - beta_t * chi
    if one_minus <= 0:
        raise ValueError("beta * chi must stay below 1")
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    grad = prob.grad(x)
    g = np.asarray(g, dtype=np.float64)
    gn_sq = dual_norm_sq(P, grad)
    sn_sq = dual_norm_sq(P, g - grad)
    gsq = dual_norm_sq(P, g)
    X = eta * (1.0 + params.sigma) / one_minus
    # written with kappa in the numerator so kappa = 0 degenerates cleanly
    pen = (1.0 - beta_next) * beta_t * kappa / (1.0 + beta_t * beta_next * kappa)
    cubic = (
        params.M_prime
        * eta**3
        / 6.0
        * ((1.0 + params.sigma) / one_minus) ** 1.5
        * gsq**1.5
    )
    rhs = (
        prob.value(x)
        - 0.5 * eta * gn_sq
        + 0.5 * eta * (X * X + X - 1.0) * gsq
        + 0.5 * eta * (1.0 + pen) * sn_sq
        + cubic
    )
    x_next = x - eta * apply_inverse(P, g)
    return float(rhs - prob.value(x_next))


def descent_residuals(prob: LogisticProblem, snapshots, params: TheoryParams) -> np.ndarray:
    """Replay a run's step snapshots through :func:`descent_residual`."""
    out = np.empty(len(snapshots))
    for i, s in enumerate(snapshots):
        out[i] = descent_residual(
            prob, s.x, s.g, s.eta, s.P, s.beta_t, s.beta_next, s.kappa, s.chi, params
        )
    return out


def harmonic_average(values) -> tuple[float, float, float]:
    """(harmonic, arithmetic, minimum) of positive values.

    The harmonic mean is minimum-dominated: it never exceeds T * min, so one
    huge entry cannot spoil it the way it spoils the arithmetic mean.
    """
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to average")
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    harmonic = v.size / float(np.sum(1.0 / v))
    return harmonic, float(np.mean(v)), float(np.min(v))


@dataclass(frozen=True)
class RateSummary:
    """Aggregates the convergence-rate certificate of one run."""

    harmonic_L: float
    arithmetic_L: float
    min_L: float
    error_series_partial: float
    min_grad_pnorm_sq: float

    def __post_init__(self):
        # minimum domination, up to roundoff
        slack = 1e-9 * max(1.0, abs(self.arithmetic_L))
        if not (self.min_L <= self.harmonic_L + slack and self.harmonic_L <= self.arithmetic_L + slack):
            raise ValueError("averages must satisfy min <= harmonic <= arithmetic")

    @classmethod
    def from_run(cls, L_locals, error_series_partial: float, min_grad_pnorm_sq: float) -> "RateSummary":
        h, a, lo = harmonic_average(L_locals)
        return cls(h, a, lo, float(error_series_partial), float(min_grad_pnorm_sq))


def variance_penalty_check(
    P: Preconditioner,
    d: Preconditioner,
    beta: float,
    s: np.ndarray,
    slack: float = 1e-10,
) -> bool:
    """Verify the dual-norm growth bound across one momentum update.

    After P' = beta P + (1-beta) d, the squared dual norm of any vector s may
    grow by at most 1 + (1-beta)/(1/delta_plus + beta), where delta_plus
    measures how far P already sits above d. Returns True when the bound
    holds within a relative slack.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    _, hi = pencil_extremes(P, d)
    # the bound degenerates to a 0/0 at delta_plus = 0; any tiny positive
    # value keeps it valid because the penalty only grows with delta_plus
    delta_plus = max(hi - 1.0, 1e-12)
    if isinstance(P, DiagonalPreconditioner):
        P_next: Preconditioner = DiagonalPreconditioner(
            beta * P.diag + (1.0 - beta) * d.diag, eps_floor=0.0
        )
    else:
        P_next = DenseSPDPreconditioner(
            beta * P.as_matrix() + (1.0 - beta) * d.as_matrix(), eps_floor=0.0
        )
    lhs = dual_norm_sq(P_next, s)
    rhs = (1.0 + (1.0 - beta) / (1.0 / delta_plus + beta)) * dual_norm_sq(P, s)
    return lhs <= rhs * (1.0 + slack)


def delta_plus_recursion(delta_plus: float, N: float, eta: float, g_pnorm: float, beta_next: float) -> float:
    """One step of the drift recursion under strong self-concordance.

    delta_plus' <= beta_next [ delta_plus
                               + delta_plus sqrt(1 + delta_plus) N eta ||g||_*
                               - 1 ]_+
    """
    if delta_plus < 0:
        raise ValueError("delta_plus must be nonnegative")
    if not 0.0 <= beta_next <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    inner = delta_plus + delta_plus * math.sqrt(1.0 + delta_plus) * N * eta * g_pnorm - 1.0
    return beta_next * max(inner, 0.0)


def hutchinson_bound_check(samples, n: int, L: float) -> tuple[bool, float]:
    """Check |z * (H z)|_i <= sqrt(n) L over a batch of probe products.

    Returns (holds, max observed ratio to the bound).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    bound = math.sqrt(n) * L
    if bound <= 0:
        return bool(np.all(samples == 0.0)), 0.0
    peak = float(np.max(np.abs(samples)))
    return peak <= bound, peak / bound


def variance_multiplier(kappa: float, beta: float) -> float:
    """Constant-beta variance penalty (1 - beta) beta / (1/kappa + beta^2)."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0.0:
        return 0.0
    return (1.0 - beta) * beta / (1.0 / kappa + beta * beta)


def variance_multiplier_worst_case(kappa: float) -> float:
    """max over beta of :func:`variance_multiplier`: (sqrt(kappa+1) - 1) / 2."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    return 0.5 * (math.sqrt(kappa + 1.0) - 1.0)


def spectrum_rows(t: int, hessian_eigs, scaled_eigs):
    """Flatten one dump into (t, eigenvalue_index, value, which) rows."""
    rows = []
    for idx, v in enumerate(np.asarray(hessian_eigs, dtype=np.float64)):
        rows.append((t, idx, float(v), "hessian"))
    for idx, v in enumerate(np.asarray(scaled_eigs, dtype=np.float64)):
        rows.append((t, idx, float(v), "scaled"))
    return rows
