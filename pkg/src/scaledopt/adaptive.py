"""Adaptive step sizes and momentum coefficients.

Everything here is a pure function of scalars extracted from the run state:
the local smoothness estimate, the gradient's dual norm, and two coupling
coefficients (kappa, chi) that compare the standing preconditioner against
the freshest curvature estimate,

    kappa_t = [ max_i [P_{t-1}]_ii / min_i [d_t]_ii - 1 ]_+
    chi_t   = [ 1 - min_i [P_{t-1}]_ii / max_i [d_t]_ii ]_+

(extreme eigenvalues of the P d^{-1} pencil in the dense case). How far the
momentum update can then drift from its own update term is controlled by
beta: ``delta_plus = beta * kappa`` and ``delta_minus = beta * chi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import DiagonalPreconditioner, Preconditioner, dual_norm_sq, norm_sq, pencil_extremes

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Local smoothness estimates are clamped below by this before any division.
L_FLOOR = 1e-6
# Adaptive/series momentum coefficients are clamped into [0, 1 - BETA_GAP].
BETA_GAP = 1e-6

__all__ = [
    "GOLDEN_RATIO",
    "L_FLOOR",
    "BETA_GAP",
    "TheoryParams",
    "kappa_chi",
    "local_lipschitz",
    "lsvrg_step_size",
    "series_beta",
    "scaled_sgd_step_bound",
    "adaptive_beta",
    "acceleration_phase",
]


@dataclass(frozen=True)
class TheoryParams:
    """Constants the adaptive rules depend on.

    ``sigma`` bounds how far the update term's scaled curvature exceeds one,
    ``M_prime`` is the self-concordance-style third-derivative constant,
    ``alpha`` is a safety factor on the smoothness step rule, ``p`` is the
    anchor-keep probability, and ``phi`` is the golden ratio (fixed).
    """

    sigma: float = 0.1
    M_prime: float = 1.0
    alpha: float = 1.0
    p: float = 0.9
    phi: float = field(default=GOLDEN_RATIO, init=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.M_prime <= 0:
            raise ValueError("M_prime must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")


def kappa_chi(P_prev: Preconditioner, d: Preconditioner) -> tuple[float, float]:
    """Coupling coefficients between the standing P and a fresh update term d."""
    if P_prev.n != d.n:
        raise ValueError("dimension mismatch between preconditioner and update term")
    if d.min_eigenvalue() <= 0:
        raise ValueError("update term must be positive definite")
    if isinstance(P_prev, DiagonalPreconditioner) and isinstance(d, DiagonalPreconditioner):
        kappa = max(P_prev.max_eigenvalue() / d.min_eigenvalue() - 1.0, 0.0)
        chi = max(1.0 - P_prev.min_eigenvalue() / d.max_eigenvalue(), 0.0)
        return kappa, chi
    # dense generalization: extremes of the P d^{-1} pencil
    lo, hi = pencil_extremes(P_prev, d)
    return max(hi - 1.0, 0.0), max(1.0 - lo, 0.0)


def local_lipschitz(
    g_prev: np.ndarray,
    g_next: np.ndarray,
    x_prev: np.ndarray,
    x_next: np.ndarray,
    P: Preconditioner,
    floor: float = L_FLOOR,
    cap: float | None = None,
    fallback: float | None = None,
) -> float:
    """Secant smoothness estimate along one step, in the P-geometry.

    ||g_next - g_prev||_P* / ||x_next - x_prev||_P, clamped into
    [floor, cap]. Zero displacement returns ``fallback`` (the previous
    estimate) rather than dividing by zero.
    """
    den_sq = norm_sq(P, np.asarray(x_next) - np.asarray(x_prev))
    if den_sq == 0.0:
        if fallback is None:
            raise ValueError("zero displacement and no fallback estimate")
        return fallback
    num_sq = dual_norm_sq(P, np.asarray(g_next) - np.asarray(g_prev))
    est = math.sqrt(num_sq / den_sq)
    est = max(est, floor)
    if cap is not None:
        est = min(est, cap)
    return est


def lsvrg_step_size(L_local: float, p: float, alpha: float = 1.0) -> float:
    """Step size min{alpha p / 3, (3/4) p / (5p + 1)} / L for the anchored method."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    L = max(L_local, L_FLOOR)
    return min(alpha * p / 3.0, 0.75 * p / (5.0 * p + 1.0)) / L


def series_beta(
    L_local: float,
    anchor_gap_sq: float,
    a_t: float,
    beta_gap: float = BETA_GAP,
) -> float:
    """Momentum coefficient 1 - a_t / (L ||x - y||^2), clamped to [0, 1 - gap].

    With a summable sequence a_t the accumulated scaling error stays bounded
    by sum(a_t). A collapsed anchor gap means there is nothing to correct and
    the coefficient saturates at the top of the clamp.
    """
    if a_t <= 0:
        raise ValueError("series term must be positive")
    L = max(L_local, L_FLOOR)
    if anchor_gap_sq <= 0.0:
        return 1.0 - beta_gap
    beta = 1.0 - a_t / (L * anchor_gap_sq)
    return float(np.clip(beta, 0.0, 1.0 - beta_gap))


def _denominator(params: TheoryParams, g_pnorm: float) -> float:
    # (1 + sigma) (phi + sqrt(M'/6 * ||g||_*)) shows up in both the step
    # bound and the adaptive momentum rule
    if g_pnorm < 0:
        raise ValueError("gradient norm must be nonnegative")
    return (1.0 + params.sigma) * (params.phi + math.sqrt(params.M_prime / 6.0 * g_pnorm))


def scaled_sgd_step_bound(
    params: TheoryParams,
    beta: float,
    kappa: float,
    chi: float,
    g_pnorm: float,
) -> float:
    """Largest safe step for the scaled anchor-free method.

    min of a curvature arm (1 - beta chi) / ((1+sigma)(phi + sqrt(M'/6 g)))
    and a variance arm (1/(1+kappa) + beta) / (1 - p).
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if kappa < 0 or chi < 0:
        raise ValueError("kappa and chi must be nonnegative")
    one_minus = 1.0 - beta * chi
    if one_minus <= 0:
        raise ValueError("beta * chi must stay below 1")
    curvature_arm = one_minus / _denominator(params, g_pnorm)
    variance_arm = (1.0 / (1.0 + kappa) + beta) / (1.0 - params.p)
    return min(curvature_arm, variance_arm)


def adaptive_beta(
    params: TheoryParams,
    beta_prev: float,
    kappa: float,
    chi: float,
    g_pnorm: float,
    beta_gap: float = BETA_GAP,
) -> float:
    """Parameter-free momentum coefficient for the scaled anchor-free method.

    max of a geometric-decay arm beta_prev / 2 and a coupling arm
    (1-p)(1 + kappa + chi) / ((1+sigma)(phi + sqrt(M'/6 g)) + (1-p) chi) - 1,
    clamped into [0, 1 - beta_gap]. Large gradients drive the coupling arm
    negative, so early iterations track fresh curvature; as the gradient
    shrinks the arm grows and the preconditioner stiffens.
    """
    if not 0.0 <= beta_prev <= 1.0:
        raise ValueError("previous beta must lie in [0, 1]")
    if kappa < 0 or chi < 0:
        raise ValueError("kappa and chi must be nonnegative")
    denom = _denominator(params, g_pnorm) + (1.0 - params.p) * chi
    coupling_arm = (1.0 - params.p) * (1.0 + kappa + chi) / denom - 1.0
    beta = max(beta_prev / 2.0, coupling_arm)
    return float(np.clip(beta, 0.0, 1.0 - beta_gap))


def acceleration_phase(
    params: TheoryParams,
    beta: float,
    chi: float,
    g_pnorm: float,
) -> bool:
    """True while the gradient is large enough for superlinear-style progress.

    Threshold: ||g||_* >= (3 / M') sqrt((1 + sigma) / (1 - beta chi)).
    """
    one_minus = 1.0 - beta * chi
    if one_minus <= 0:
        raise ValueError("beta * chi must stay below 1")
    threshold = (3.0 / params.M_prime) * math.sqrt((1.0 + params.sigma) / one_minus)
    return g_pnorm >= threshold
