"""Stochastic gradient methods with momentum-updated preconditioners.

Four algorithms share one loop:

* ``sgd``          minibatch gradient, full gradient with probability 1-p
* ``scaled-sgd``   the same estimator, steps through P^{-1}
* ``lsvrg``        loopless variance reduction against an anchor point that
                   refreshes with probability 1-p
* ``scaled-lsvrg`` variance reduction plus the preconditioner

The scaled variants keep P on one of the update policies from
:mod:`scaledopt.precond`; with the ``identity-frozen`` policy they reduce to
their unscaled counterparts bit for bit (the identity path performs the same
arithmetic and consumes the same random draws).

Randomness is split into three named substreams (batches, anchor/estimator
coins, Hutchinson probes) so enabling or disabling the preconditioner never
shifts the batch sequence.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import adaptive as ad
from .data import SeededRng
from .diagnostics import StepSnapshot
from .linalg import EPS_FLOOR, apply_inverse, dual_norm_sq, scaled_hessian_spectrum
from .objective import DENSE_HESSIAN_CAP, LogisticProblem
from .precond import KINDS, PreconditionerState, momentum_update, update_term

ALGORITHMS = ("sgd", "scaled-sgd", "lsvrg", "scaled-lsvrg")
ETA_KINDS = ("constant", "local-smoothness", "adaptive-bound", "line-search")
BETA_KINDS = ("constant", "series", "adaptive")

DIVERGENCE_THRESHOLD = 1e12

__all__ = [
    "ALGORITHMS",
    "ETA_KINDS",
    "BETA_KINDS",
    "EtaSchedule",
    "BetaSchedule",
    "AlgoConfig",
    "TraceRecord",
    "RunResult",
    "lsvrg_gradient",
    "anchor_update",
    "minimize_scalar_bounded",
    "brent_line_search",
    "Optimizer",
    "run",
]


@dataclass(frozen=True)
class EtaSchedule:
    """Step-size policy.

    ``constant`` uses ``value``; ``local-smoothness`` divides the anchored
    method's safe constant by the running local estimate;
    ``adaptive-bound`` uses the scaled method's inexactness bound;
    ``line-search`` minimizes f along the step ray on [0, 1].
    """

    kind: str = "constant"
    value: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ETA_KINDS:
            raise ValueError(f"unknown eta schedule {self.kind!r}; expected one of {ETA_KINDS}")
        if self.kind == "constant" and self.value < 0:
            raise ValueError("constant step size must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class BetaSchedule:
    """Momentum-coefficient policy for the preconditioner update.

    ``constant`` uses ``value`` in [0, 1] (1 freezes P, matching the unscaled
    endpoint of a sweep); ``series`` spends a summable budget
    a_t = a0 / (t+1)^2 against the anchor gap; ``adaptive`` runs the
    parameter-free coupling rule starting from beta = 0.
    """

    kind: str = "constant"
    value: float = 0.99
    a0: float = 1.0

    def __post_init__(self):
        if self.kind not in BETA_KINDS:
            raise ValueError(f"unknown beta schedule {self.kind!r}; expected one of {BETA_KINDS}")
        if self.kind == "constant" and not 0.0 <= self.value <= 1.0:
            raise ValueError("constant beta must lie in [0, 1]")
        if self.a0 <= 0:
            raise ValueError("a0 must be positive")


@dataclass(frozen=True)
class AlgoConfig:
    """Everything one optimization run needs besides the problem itself."""

    algo: str
    T: int = 300
    batch_size: int = 100
    p: float = 0.9
    seed: int = 0
    eta: EtaSchedule = field(default_factory=EtaSchedule)
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    precond_kind: str | None = None
    precond_eps: float = EPS_FLOOR
    precond_full_hessian: bool = False
    dense_cap: int = DENSE_HESSIAN_CAP
    sample_with_replacement: bool = True
    diagnostics: str = "off"
    diagnostics_cadence: int = 10
    theory: ad.TheoryParams | None = None
    trace_thin: int = 1

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.precond_eps <= 0:
            raise ValueError("eps floor must be positive")
        if self.diagnostics not in ("off", "light", "full"):
            raise ValueError("diagnostics must be off, light, or full")
        if self.diagnostics_cadence < 1:
            raise ValueError("diagnostics cadence must be at least 1")
        if self.trace_thin < 1:
            raise ValueError("trace thinning must be at least 1")
        kind = self.precond_kind
        if kind is not None and kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {kind!r}; expected one of {KINDS}")
        if not self.scaled and kind not in (None, "identity-frozen"):
            raise ValueError(f"{self.algo} does not precondition; drop precond_kind={kind!r}")
        if self.beta.kind == "series" and not self.anchored:
            raise ValueError("series beta needs an anchored algorithm")
        if self.theory is not None and self.theory.p != self.p:
            raise ValueError("theory.p must match the run's p")
        if self.theory is None:
            object.__setattr__(self, "theory", ad.TheoryParams(p=self.p))

    @property
    def scaled(self) -> bool:
        return self.algo.startswith("scaled-")

    @property
    def anchored(self) -> bool:
        return self.algo.endswith("lsvrg")

    @property
    def resolved_precond_kind(self) -> str:
        if not self.scaled:
            return "identity-frozen"
        if self.precond_kind is None:
            return "diagonal-hutchinson"
        return self.precond_kind


@dataclass
class TraceRecord:
    """One trace row; column set and order are a stable external contract."""

    run_id: str
    t: int
    f: float
    grad_norm2: float
    grad_pnorm2: float
    eta: float | None
    beta: float | None
    L_local: float | None
    Delta: float | None
    kappa: float | None
    chi: float | None
    delta_plus: float | None
    delta_minus: float | None
    lambda_min_scaled: float | None
    lambda_max_scaled: float | None
    wall_ms: float

    COLUMNS = (
        "run_id",
        "t",
        "f",
        "grad_norm2",
        "grad_pnorm2",
        "eta",
        "beta",
        "L_local",
        "Delta",
        "kappa",
        "chi",
        "delta_plus",
        "delta_minus",
        "lambda_min_scaled",
        "lambda_max_scaled",
        "wall_ms",
    )

    def as_row(self) -> list:
        out = []
        for name in self.COLUMNS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(v)
        return out


@dataclass
class RunResult:
    """Trace plus the aggregates the experiment commands consume."""

    run_id: str
    trace: list
    diverged: bool
    x_final: np.ndarray
    f_final: float
    grad_norm2_final: float
    wall_ms: float
    L_locals: list
    error_series: float
    min_grad_pnorm_sq: float
    snapshots: list | None = None
    spectra: list | None = None

    def summary(self) -> dict:
        return {
            "run_id": self.run_id,
            "final_f": self.f_final,
            "final_grad_norm2": self.grad_norm2_final,
            "diverged": self.diverged,
            "wall_ms": self.wall_ms,
        }

    def rate_summary(self):
        from .diagnostics import RateSummary

        if not self.L_locals:
            return None
        return RateSummary.from_run(self.L_locals, self.error_series, self.min_grad_pnorm_sq)


def lsvrg_gradient(prob: LogisticProblem, x, y, full_grad_y, batch) -> np.ndarray:
    """Variance-reduced estimator grad_B(x) - grad_B(y) + grad(y)."""
    return prob.grad(x, batch) - prob.grad(y, batch) + full_grad_y


def anchor_update(rng: SeededRng, p: float, x, y, full_grad_y, full_grad_x):
    """Keep the anchor with probability p, else move it to the current point.

    Returns ``(y, full_grad_y, refreshed)``. The refreshed anchor gradient
    reuses the exact full gradient already computed at x, so it is exact by
    construction, never stale.
    """
    if rng.random() < 1.0 - p:
        return x.copy(), full_grad_x.copy(), True
    return y, full_grad_y, False


def minimize_scalar_bounded(phi, lo: float, hi: float, xatol: float = 1e-8, maxfun: int = 100):
    """Bounded scalar minimization that cannot return worse than any probe.

    Wraps Brent-style bounded search and always evaluates both endpoints, so
    a monotone phi returns the better endpoint and the result is the argmin
    over every point actually evaluated (at most ``maxfun`` of them).
    """
    if not hi > lo:
        raise ValueError("need hi > lo")
    history: list[tuple[float, float]] = []

    def tracked(u: float) -> float:
        v = float(phi(u))
        if math.isnan(v):
            v = math.inf
        history.append((u, v))
        return v

    tracked(lo)
    tracked(hi)
    budget = max(maxfun - len(history), 5)
    scipy.optimize.fminbound(tracked, lo, hi, xtol=xatol, maxfun=budget, disp=0)
    best_u, _ = min(history, key=lambda uv: (uv[1], uv[0]))
    return best_u, len(history)


def brent_line_search(prob: LogisticProblem, x, direction, lo: float = 0.0, hi: float = 1.0) -> float:
    """Step size minimizing f(x - eta * direction) over [lo, hi]."""
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)

    def phi(eta: float) -> float:
        return prob.value(x - eta * direction)

    eta, _ = minimize_scalar_bounded(phi, lo, hi)
    return eta


@dataclass
class IterateState:
    """Mutable per-run state: the iterate, the anchor, and their gradients."""

    x: np.ndarray
    y: np.ndarray
    full_grad_x: np.ndarray
    full_grad_y: np.ndarray
    f_x: float
    t: int = 0


class Optimizer:
    """One optimization run; owns all mutable state and the trace."""

    def __init__(self, prob: LogisticProblem, cfg: AlgoConfig, run_id: str = "run", x0=None):
        self.prob = prob
        self.cfg = cfg
        self.run_id = run_id
        root = SeededRng(cfg.seed)
        self.rng_batch = root.substream("batch")
        self.rng_anchor = root.substream("anchor")
        self.rng_probe = root.substream("probe")
        x = np.zeros(prob.n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
        g0 = prob.grad(x)
        self.state = IterateState(
            x=x, y=x.copy(), full_grad_x=g0, full_grad_y=g0.copy(), f_x=prob.value(x)
        )
        self.pstate = PreconditionerState.initial(prob.n, cfg.resolved_precond_kind, cfg.precond_eps)
        self.frozen = self.pstate.kind == "identity-frozen"
        self.sched = _ScheduleState(
            beta_prev=0.0, L_local=prob.global_lipschitz(), kappa=0.0, chi=0.0
        )
        self.global_L = prob.global_lipschitz()
        self.diverged = False
        self.trace: list[TraceRecord] = []
        self.L_locals: list[float] = []
        self.error_series = 0.0
        self.min_grad_pnorm_sq = math.inf
        self.snapshots: list[StepSnapshot] | None = [] if cfg.diagnostics == "full" else None
        self.spectra: list | None = [] if cfg.diagnostics == "full" else None
        self._t0 = time.perf_counter()
        self._emit_row(eta=None, beta=None, L_local=None)

    # -- trace plumbing ------------------------------------------------------

    def _wall_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0

    def _diag_columns(self, d) -> dict:
        cols = dict(
            Delta=None, kappa=None, chi=None, delta_plus=None, delta_minus=None,
            lambda_min_scaled=None, lambda_max_scaled=None,
        )
        cfg = self.cfg
        if cfg.diagnostics == "off":
            return cols
        if d is not None:
            # cheap couplings: the momentum identification gives the pencil
            # drift directly from (beta, kappa, chi)
            cols["kappa"] = self.sched.kappa
            cols["chi"] = self.sched.chi
            cols["delta_plus"] = self.sched.beta_prev * self.sched.kappa
            cols["delta_minus"] = self.sched.beta_prev * self.sched.chi
        if cfg.diagnostics == "full" and self.state.t % cfg.diagnostics_cadence == 0:
            if self.prob.n <= cfg.dense_cap:
                H = self.prob.full_hessian(self.state.x, cap=cfg.dense_cap)
                hess_eigs = np.linalg.eigvalsh(H)
                scaled = scaled_hessian_spectrum(H, self.pstate.P)
                cols["Delta"] = float(scaled[-1] - 1.0)
                cols["lambda_min_scaled"] = float(scaled[0])
                cols["lambda_max_scaled"] = float(scaled[-1])
                if self.spectra is not None:
                    self.spectra.append((self.state.t, hess_eigs, scaled))
        return cols

    def _emit_row(self, eta, beta, L_local, d=None):
        t = self.state.t
        grad_pnorm2 = dual_norm_sq(self.pstate.P, self.state.full_grad_x)
        if t >= 1:
            self.min_grad_pnorm_sq = min(self.min_grad_pnorm_sq, grad_pnorm2)
        if t % self.cfg.trace_thin == 0 or t == self.cfg.T:
            cols = self._diag_columns(d)
            self.trace.append(
                TraceRecord(
                    run_id=self.run_id,
                    t=t,
                    f=self.state.f_x,
                    grad_norm2=float(np.dot(self.state.full_grad_x, self.state.full_grad_x)),
                    grad_pnorm2=grad_pnorm2,
                    eta=eta,
                    beta=beta,
                    L_local=L_local,
                    wall_ms=self._wall_ms(),
                    **cols,
                )
            )

    # -- schedule evaluation ---------------------------------------------------

    def _choose_eta(self, g, g_pnorm2, direction) -> float:
        sched, cfg = self.sched, self.cfg
        kind = cfg.eta.kind
        if kind == "constant":
            return cfg.eta.value
        if kind == "adaptive-bound":
            return ad.scaled_sgd_step_bound(
                cfg.theory, sched.beta_prev, sched.kappa, sched.chi, math.sqrt(g_pnorm2)
            )
        return brent_line_search(self.prob, self.state.x, direction)

    def _certified_smoothness_step(self, direction):
        """Backtracked step: the smoothness estimate must hold on the segment.

        The safe step rule divides a constant by L, but L is only known after
        the step reveals the segment. Doubling L until the realized secant
        stays below it certifies the pair (eta, segment); the estimate halves
        again at the next call so a single stiff region does not freeze the
        run. The Euclidean constant over lambda_min(P) bounds every secant in
        the P geometry, so the loop always terminates at that cap.
        """
        prob, cfg, st = self.prob, self.cfg, self.state
        P = self.pstate.P
        cap = self.global_L / P.min_eigenvalue()
        L_try = min(max(0.5 * self.sched.L_local, ad.L_FLOOR), cap)
        for _ in range(80):
            eta = ad.lsvrg_step_size(L_try, cfg.p, cfg.eta.alpha)
            x_trial = st.x - eta * direction
            if not np.all(np.isfinite(x_trial)):
                L_try = min(4.0 * L_try, cap)
                if L_try >= cap:
                    break
                continue
            g_trial = prob.grad(x_trial)
            L_seg = ad.local_lipschitz(
                st.full_grad_x, g_trial, st.x, x_trial, P,
                floor=ad.L_FLOOR, fallback=L_try,
            )
            if L_seg <= L_try or L_try >= cap:
                return eta, L_try, x_trial, g_trial
            L_try = min(max(2.0 * L_try, L_seg), cap)
        eta = ad.lsvrg_step_size(L_try, cfg.p, cfg.eta.alpha)
        x_trial = st.x - eta * direction
        g_trial = prob.grad(x_trial) if np.all(np.isfinite(x_trial)) else np.full(prob.n, np.nan)
        return eta, L_try, x_trial, g_trial

    def _choose_beta(self, t, kappa, chi, g_pnorm2, L_new, gap_sq) -> float:
        cfg = self.cfg
        if cfg.beta.kind == "constant":
            return cfg.beta.value
        if cfg.beta.kind == "series":
            a_t = cfg.beta.a0 / (t + 1) ** 2
            return ad.series_beta(L_new, gap_sq, a_t)
        return ad.adaptive_beta(
            cfg.theory, self.sched.beta_prev, kappa, chi, math.sqrt(g_pnorm2)
        )

    # -- the loop ---------------------------------------------------------------

    def step(self) -> bool:
        """One full iteration. Returns False once the run should stop."""
        if self.diverged or self.state.t >= self.cfg.T:
            return False
        prob, cfg, st = self.prob, self.cfg, self.state

        batch = self.rng_batch.batch_indices(prob.m, cfg.batch_size, cfg.sample_with_replacement)

        if cfg.anchored:
            g = lsvrg_gradient(prob, st.x, st.y, st.full_grad_y, batch)
        else:
            # full gradient with probability 1-p, minibatch otherwise
            if self.rng_anchor.random() < 1.0 - cfg.p:
                g = st.full_grad_x
            else:
                g = prob.grad(st.x, batch)

        g_pnorm2 = dual_norm_sq(self.pstate.P, g)
        direction = apply_inverse(self.pstate.P, g)

        if cfg.eta.kind == "local-smoothness":
            eta, L_new, x_new, g_full_new = self._certified_smoothness_step(direction)
        else:
            eta = self._choose_eta(g, g_pnorm2, direction)
            x_new = st.x - eta * direction
            g_full_new = None
            L_new = None

        if cfg.anchored:
            st.y, st.full_grad_y, _ = anchor_update(
                self.rng_anchor, cfg.p, st.x, st.y, st.full_grad_y, st.full_grad_x
            )

        if not np.all(np.isfinite(x_new)):
            self.diverged = True
            return False
        f_new = prob.value(x_new)
        if not math.isfinite(f_new):
            self.diverged = True
            return False
        if g_full_new is None:
            g_full_new = prob.grad(x_new)
        if L_new is None:
            # observational smoothness along the realized segment, in the
            # geometry that produced it; the Euclidean constant transfers to
            # a P-geometry cap through lambda_min(P)
            L_new = ad.local_lipschitz(
                st.full_grad_x, g_full_new, st.x, x_new, self.pstate.P,
                floor=ad.L_FLOOR, cap=self.global_L / self.pstate.P.min_eigenvalue(),
                fallback=self.sched.L_local,
            )
        self.L_locals.append(L_new)

        gap_sq = 0.0
        if cfg.anchored:
            diff = x_new - st.y
            gap_sq = float(np.dot(diff, diff))

        entering_beta = self.sched.beta_prev
        entering_kappa = self.sched.kappa
        entering_chi = self.sched.chi
        P_used = self.pstate.P

        d = None
        beta_next: float | None
        if self.frozen:
            beta_next = 1.0
        else:
            hess_batch = None if cfg.precond_full_hessian else batch
            d, _raw = update_term(
                self.pstate, prob, x_new, rng_probe=self.rng_probe,
                batch=hess_batch, dense_cap=cfg.dense_cap,
            )
            kappa, chi = ad.kappa_chi(self.pstate.P, d)
            beta_next = self._choose_beta(st.t, kappa, chi, g_pnorm2, L_new, gap_sq)
            self.pstate = momentum_update(self.pstate, d, beta_next)
            self.sched.kappa, self.sched.chi = kappa, chi
            self.sched.beta_prev = beta_next

        if cfg.anchored:
            self.error_series += L_new * (1.0 - (beta_next if not self.frozen else 1.0)) * gap_sq

        if self.snapshots is not None:
            self.snapshots.append(
                StepSnapshot(
                    x=st.x.copy(), g=np.array(g, copy=True), eta=eta, P=P_used,
                    beta_t=entering_beta, beta_next=(beta_next if beta_next is not None else 1.0),
                    kappa=entering_kappa, chi=entering_chi,
                )
            )

        self.sched.L_local = L_new
        st.x = x_new
        st.full_grad_x = g_full_new
        st.f_x = f_new
        st.t += 1
        self._emit_row(eta=eta, beta=beta_next, L_local=L_new, d=d)

        if abs(f_new) > DIVERGENCE_THRESHOLD:
            self.diverged = True
            return False
        return True

    def run(self) -> RunResult:
        while self.step():
            pass
        st = self.state
        return RunResult(
            run_id=self.run_id,
            trace=self.trace,
            diverged=self.diverged,
            x_final=st.x,
            f_final=st.f_x,
            grad_norm2_final=float(np.dot(st.full_grad_x, st.full_grad_x)),
            wall_ms=self._wall_ms(),
            L_locals=self.L_locals,
            error_series=self.error_series,
            min_grad_pnorm_sq=self.min_grad_pnorm_sq,
            snapshots=self.snapshots,
            spectra=self.spectra,
        )


@dataclass
class _ScheduleState:
    beta_prev: float
    L_local: float
    kappa: float
    chi: float


def run(prob: LogisticProblem, cfg: AlgoConfig, run_id: str = "run", x0=None) -> RunResult:
    """Convenience wrapper: build an :class:`Optimizer` and drive it to the end."""
    return Optimizer(prob, cfg, run_id=run_id, x0=x0).run()
