"""Optimizer family tests: estimator, anchor policy, stepping, line search,
and whole-run orchestration.

The line-search oracle is a dense grid scan over the step interval, evaluated
with numpy broadcasting against the logistic loss written out directly.
"""

import math

import numpy as np
import pytest

from conftest import make_problem

from scaledopt.data import SeededRng
from scaledopt.optim import (
    AlgoConfig,
    BetaSchedule,
    EtaSchedule,
    Optimizer,
    TraceRecord,
    anchor_update,
    brent_line_search,
    lsvrg_gradient,
    minimize_scalar_bounded,
    run,
)


def rows_without_wall(result):
    """Trace rows with the wallclock column (the only nondeterministic one) dropped."""
    return [r.as_row()[:-1] for r in result.trace]


class TestLsvrgGradient:
    def test_collapsed_anchor_returns_full_gradient(self, np_rng, small_problem):
        prob = small_problem
        x = np_rng.normal(size=prob.n)
        y = x.copy()
        full_y = prob.grad(y)
        for k in range(5):
            batch = SeededRng(k).batch_indices(prob.m, 8, True)
            g = lsvrg_gradient(prob, x, y, full_y, batch)
            assert np.array_equal(g, prob.grad(x))

    def test_singleton_enumeration_is_unbiased(self, np_rng):
        prob, _ = make_problem(10, 4, seed=5, density=0.5)
        x = np_rng.normal(size=prob.n)
        y = np_rng.normal(size=prob.n)
        full_y = prob.grad(y)
        mean_g = np.mean(
            [lsvrg_gradient(prob, x, y, full_y, np.array([i])) for i in range(prob.m)],
            axis=0,
        )
        grad = prob.grad(x)
        scale = max(1.0, float(np.max(np.abs(grad))))
        assert float(np.max(np.abs(mean_g - grad))) <= 1e-14 * scale

    def test_full_batch_collapses_to_gradient(self, np_rng, small_problem):
        prob = small_problem
        x = np_rng.normal(size=prob.n)
        y = np_rng.normal(size=prob.n)
        g = lsvrg_gradient(prob, x, y, prob.grad(y), np.arange(prob.m))
        np.testing.assert_allclose(g, prob.grad(x), rtol=0, atol=1e-15)


class _KeepRng:
    """Anchor stub: every draw lands in the keep region."""

    def random(self):
        return 0.5


class TestAnchorUpdate:
    def test_keep_limit_never_moves(self, small_problem, np_rng):
        prob = small_problem
        x = np_rng.normal(size=prob.n)
        y = np_rng.normal(size=prob.n)
        full_y = prob.grad(y)
        full_x = prob.grad(x)
        rng = _KeepRng()
        for _ in range(10_000):
            y2, cache2, refreshed = anchor_update(rng, 0.999999, x, y, full_y, full_x)
            assert not refreshed
            assert y2 is y and cache2 is full_y

    def test_refresh_frequency_in_binomial_band(self, small_problem, np_rng):
        prob = small_problem
        x = np_rng.normal(size=prob.n)
        y = np_rng.normal(size=prob.n)
        full_y, full_x = prob.grad(y), prob.grad(x)
        rng = SeededRng(42).substream("anchor")
        p, trials = 0.9, 10_000
        hits = sum(
            anchor_update(rng, p, x, y, full_y, full_x)[2] for _ in range(trials)
        )
        mean = trials * (1.0 - p)
        band = 3.0 * math.sqrt(trials * p * (1.0 - p))
        assert mean - band <= hits <= mean + band

    def test_refresh_installs_exact_cache(self, small_problem, np_rng):
        prob = small_problem
        x = np_rng.normal(size=prob.n)
        y = np_rng.normal(size=prob.n)
        full_y, full_x = prob.grad(y), prob.grad(x)
        rng = SeededRng(7)
        refreshed = False
        for _ in range(200):
            y2, cache2, refreshed = anchor_update(rng, 0.9, x, y, full_y, full_x)
            if refreshed:
                break
        assert refreshed
        assert np.array_equal(y2, x)
        assert np.array_equal(cache2, prob.grad(y2))
        # the returned anchor is a copy, not a view of the iterate
        x[0] += 1.0
        assert y2[0] != x[0]


class TestStepMechanics:
    def test_identity_frozen_scaled_run_reduces_to_plain(self, medium_problem):
        common = dict(
            T=60, batch_size=20, p=0.9, seed=31,
            eta=EtaSchedule(kind="local-smoothness"),
        )
        scaled = run(
            medium_problem,
            AlgoConfig(algo="scaled-lsvrg", precond_kind="identity-frozen", **common),
        )
        plain = run(medium_problem, AlgoConfig(algo="lsvrg", **common))
        assert rows_without_wall(scaled) == rows_without_wall(plain)
        assert np.array_equal(scaled.x_final, plain.x_final)

    def test_identity_frozen_reduction_also_holds_unanchored(self, medium_problem):
        common = dict(
            T=60, batch_size=20, p=0.9, seed=31,
            eta=EtaSchedule(kind="constant", value=0.05),
        )
        scaled = run(
            medium_problem,
            AlgoConfig(algo="scaled-sgd", precond_kind="identity-frozen", **common),
        )
        plain = run(medium_problem, AlgoConfig(algo="sgd", **common))
        assert rows_without_wall(scaled) == rows_without_wall(plain)
        assert np.array_equal(scaled.x_final, plain.x_final)

    def test_zero_step_leaves_iterate_unchanged(self, small_problem):
        cfg = AlgoConfig(
            algo="lsvrg", T=5, batch_size=8, p=0.9, seed=2,
            eta=EtaSchedule(kind="constant", value=0.0),
        )
        opt = Optimizer(small_problem, cfg)
        res = opt.run()
        assert np.array_equal(opt.state.x, np.zeros(small_problem.n))
        assert all(r.f == res.trace[0].f for r in res.trace)

    def test_small_full_gradient_step_descends(self, medium_problem):
        prob = medium_problem
        eta = 1e-3 / prob.global_lipschitz()
        cfg = AlgoConfig(
            algo="sgd", T=1, batch_size=prob.m, p=0.5, seed=3,
            sample_with_replacement=False,
            eta=EtaSchedule(kind="constant", value=eta),
        )
        res = run(prob, cfg)
        assert res.f_final < res.trace[0].f


class _Quadratic:
    def value(self, v):
        return (float(v[0]) - 0.3) ** 2


class _Decreasing:
    def value(self, v):
        return -float(v[0])


class TestBrentLineSearch:
    def test_quadratic_stub_finds_vertex(self):
        eta = brent_line_search(_Quadratic(), np.array([0.0]), np.array([-1.0]))
        assert abs(eta - 0.3) <= 1e-6

    def test_monotone_decreasing_returns_far_end(self):
        eta = brent_line_search(_Decreasing(), np.array([0.0]), np.array([-1.0]))
        assert eta >= 1.0 - 1e-6

    def test_matches_dense_grid_oracle(self, np_rng):
        prob, _ = make_problem(40, 8, seed=17, density=0.4)
        x = np_rng.normal(size=prob.n)
        d = prob.grad(x)
        eta_star = brent_line_search(prob, x, d)
        assert 0.0 <= eta_star <= 1.0

        X = prob.dataset.features
        y = prob.dataset.labels.astype(np.float64)
        etas = np.linspace(0.0, 1.0, 100_001)
        z = np.asarray(X @ x)[:, None] - etas[None, :] * np.asarray(X @ d)[:, None]
        grid_f = np.logaddexp(0.0, -y[:, None] * z).mean(axis=0)
        assert prob.value(x - eta_star * d) <= float(grid_f.min()) + 1e-4

    def test_never_worse_than_either_endpoint(self, np_rng, small_problem):
        prob = small_problem
        for _ in range(5):
            x = np_rng.normal(size=prob.n)
            d = np_rng.normal(size=prob.n)  # arbitrary, not necessarily descent
            eta = brent_line_search(prob, x, d)
            assert prob.value(x - eta * d) <= min(prob.value(x), prob.value(x - d))

    def test_bounded_minimizer_validates_interval(self):
        with pytest.raises(ValueError):
            minimize_scalar_bounded(lambda u: u, 1.0, 1.0)


class TestRunOrchestration:
    def test_zero_iterations_reports_initial_point(self, small_problem):
        prob = small_problem
        cfg = AlgoConfig(algo="scaled-lsvrg", T=0, batch_size=8, p=0.9, seed=4)
        res = run(prob, cfg)
        assert len(res.trace) == 1 and res.trace[0].t == 0
        x0 = np.zeros(prob.n)
        assert res.f_final == prob.value(x0)
        g0 = prob.grad(x0)
        assert res.grad_norm2_final == float(np.dot(g0, g0))
        assert not res.diverged
        summary = res.summary()
        assert summary["final_f"] == res.f_final
        assert summary["diverged"] is False

    def test_same_seed_bitwise_identical(self, medium_problem):
        cfg = AlgoConfig(
            algo="scaled-lsvrg", T=40, batch_size=20, p=0.9, seed=12,
            eta=EtaSchedule(kind="local-smoothness"),
            beta=BetaSchedule(kind="constant", value=0.97),
            diagnostics="light",
        )
        a = run(medium_problem, cfg)
        b = run(medium_problem, cfg)
        assert rows_without_wall(a) == rows_without_wall(b)
        assert np.array_equal(a.x_final, b.x_final)
        assert a.error_series == b.error_series

    def test_divergence_flagged_with_partial_trace(self, small_problem):
        cfg = AlgoConfig(
            algo="sgd", T=10, batch_size=8, p=0.9, seed=1,
            eta=EtaSchedule(kind="constant", value=1e30),
        )
        res = run(small_problem, cfg)
        assert res.diverged
        assert 2 <= len(res.trace) <= cfg.T + 1
        assert res.summary()["diverged"] is True

    def test_trace_thinning_keeps_first_and_last(self, small_problem):
        cfg = AlgoConfig(
            algo="lsvrg", T=10, batch_size=8, p=0.9, seed=6,
            eta=EtaSchedule(kind="constant", value=0.1),
            trace_thin=3,
        )
        res = run(small_problem, cfg)
        assert [r.t for r in res.trace] == [0, 3, 6, 9, 10]

    def test_anchor_gradient_cache_never_stale(self, small_problem):
        cfg = AlgoConfig(
            algo="scaled-lsvrg", T=30, batch_size=8, p=0.8, seed=9,
            eta=EtaSchedule(kind="local-smoothness"),
        )
        opt = Optimizer(small_problem, cfg)
        opt.run()
        assert np.array_equal(opt.state.full_grad_y, small_problem.grad(opt.state.y))
        assert np.array_equal(opt.state.full_grad_x, small_problem.grad(opt.state.x))

    def test_trace_column_order_is_pinned(self):
        assert TraceRecord.COLUMNS == (
            "run_id", "t", "f", "grad_norm2", "grad_pnorm2", "eta", "beta",
            "L_local", "Delta", "kappa", "chi", "delta_plus", "delta_minus",
            "lambda_min_scaled", "lambda_max_scaled", "wall_ms",
        )


class TestEstimatorVariance:
    def test_exactly_zero_at_anchor(self, np_rng, medium_problem):
        prob = medium_problem
        x = np_rng.normal(size=prob.n)
        full = prob.grad(x)
        rng = SeededRng(5).substream("batch")
        for _ in range(200):
            g = lsvrg_gradient(prob, x, x, full, rng.batch_indices(prob.m, 10, True))
            assert np.array_equal(g, full)

    def test_shrinks_monotonically_with_anchor_gap(self, medium_problem):
        prob = medium_problem
        base = np.random.default_rng(44)
        x = base.normal(size=prob.n)
        u = base.normal(size=prob.n)
        u /= np.linalg.norm(u)
        grad_x = prob.grad(x)
        for seed in (101, 202, 303):
            spreads = []
            for scale in (1.0, 0.5, 0.25, 0.1):
                y = x + scale * u
                full_y = prob.grad(y)
                rng = SeededRng(seed).substream("batch")
                dev = [
                    lsvrg_gradient(prob, x, y, full_y, rng.batch_indices(prob.m, 10, True)) - grad_x
                    for _ in range(300)
                ]
                spreads.append(float(np.mean([np.dot(e, e) for e in dev])))
            assert spreads == sorted(spreads, reverse=True)
            assert spreads[-1] < spreads[0]


class TestLineSearchNeverIncreases:
    @pytest.mark.parametrize("algo", ["lsvrg", "scaled-lsvrg"])
    def test_f_column_monotone(self, medium_problem, algo):
        cfg = AlgoConfig(
            algo=algo, T=80, batch_size=20, p=0.9, seed=8,
            eta=EtaSchedule(kind="line-search"),
        )
        res = run(medium_problem, cfg)
        fs = [r.f for r in res.trace]
        assert all(b <= a for a, b in zip(fs, fs[1:]))


class TestConfigValidation:
    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            AlgoConfig(algo="newton", T=10)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", T=-1)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", batch_size=0)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", p=0.0)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", p=1.0)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", diagnostics="verbose")
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", trace_thin=0)
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", precond_kind="diagonal-hutchinson")
        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", beta=BetaSchedule(kind="series"))
        with pytest.raises(ValueError):
            EtaSchedule(kind="warp-speed")
        with pytest.raises(ValueError):
            EtaSchedule(kind="constant", value=-0.1)
        with pytest.raises(ValueError):
            BetaSchedule(kind="constant", value=1.5)
        with pytest.raises(ValueError):
            BetaSchedule(kind="series", a0=-1.0)

    def test_theory_p_must_match(self):
        from scaledopt.adaptive import TheoryParams

        with pytest.raises(ValueError):
            AlgoConfig(algo="sgd", p=0.9, theory=TheoryParams(p=0.5))

    def test_default_preconditioner_resolution(self):
        assert AlgoConfig(algo="sgd").resolved_precond_kind == "identity-frozen"
        assert AlgoConfig(algo="lsvrg").resolved_precond_kind == "identity-frozen"
        assert AlgoConfig(algo="scaled-sgd").resolved_precond_kind == "diagonal-hutchinson"
        assert (
            AlgoConfig(algo="scaled-lsvrg", precond_kind="dense-absolute").resolved_precond_kind
            == "dense-absolute"
        )
