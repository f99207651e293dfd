import math

import numpy as np
import pytest

from strokeopt import RasterConfig, Sketch, Stroke, composite_to_rgb, render
from strokeopt.loss import LossReport, LossSpec
from strokeopt.optimize import (
    AdamState,
    OptConfig,
    OptRunResult,
    StopReason,
    adam_step,
    run_multi_seed,
    run_single,
)
from strokeopt.protocol import TransportError
from strokeopt.saliency import DistributionMap
from tests.conftest import random_sketch

CFG32 = RasterConfig(softness=0.7)


def scalar_adam_reference(params, grads, m, v, t, lr, b1, b2, eps):
    """Independent per-component Adam oracle in plain Python floats."""
    out_p, out_m, out_v = [], [], []
    t = t + 1
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = b1 * mi + (1 - b1) * g
        vi = b2 * vi + (1 - b2) * g * g
        m_hat = mi / (1 - b1**t)
        v_hat = vi / (1 - b2**t)
        out_p.append(p - lr * m_hat / (math.sqrt(v_hat) + eps))
        out_m.append(mi)
        out_v.append(vi)
    return out_p, out_m, out_v, t


class ScriptedBackend:
    """Test double: scripted evaluation losses, zero gradients.

    Training calls (augment_views > 0) advance the iteration counter;
    evaluation calls (augment_views == 0) report schedule[iteration].
    """

    def __init__(self, schedule, shape=(16, 16, 3)):
        self.schedule = schedule
        self.shape = shape
        self.iteration = 0
        self.spec = LossSpec(backend="l2", augment_views=1)

    def evaluate(self, image, *, augment_views=0, seed=0):
        grad = np.zeros(self.shape)
        if augment_views == 0:
            value = self.schedule[self.iteration]
            return LossReport(value, 0.0, value, grad)
        self.iteration += 1
        return LossReport(0.0, 0.0, 0.0, grad)


class TestAdamStep:
    def test_zero_gradient_keeps_params(self):
        params = np.array([1.0, -2.0, 3.0])
        state = AdamState.zeros(3)
        new, new_state = adam_step(params, np.zeros(3), state, OptConfig())
        np.testing.assert_array_equal(new, params)
        assert new_state.t == 1 and state.t == 0

    def test_first_step_closed_form(self, rng):
        g = rng.normal(size=6)
        cfg = OptConfig(lr=0.5)
        new, _ = adam_step(np.zeros(6), g, AdamState.zeros(6), cfg)
        np.testing.assert_allclose(new, -cfg.lr * g / (np.abs(g) + cfg.eps_adam), rtol=1e-12)

    def test_matches_scalar_reference(self, rng):
        cfg = OptConfig(lr=0.3)
        params, grads = rng.normal(size=8), rng.normal(size=8)
        state = AdamState(rng.uniform(size=8), rng.uniform(size=8) + 0.1, t=5)
        new, new_state = adam_step(params, grads, state, cfg)
        ref_p, ref_m, ref_v, ref_t = scalar_adam_reference(
            params, grads, state.m, state.v, state.t,
            cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
        np.testing.assert_allclose(new, ref_p, atol=1e-12)
        np.testing.assert_allclose(new_state.m, ref_m, atol=1e-12)
        np.testing.assert_allclose(new_state.v, ref_v, atol=1e-12)
        assert new_state.t == ref_t

    def test_converges_on_quadratic(self, rng):
        # min ||x - c||^2, the classic sanity check.
        c = rng.uniform(-2, 2, size=10)
        x = rng.uniform(-2, 2, size=10)
        cfg = OptConfig(lr=0.1)
        state = AdamState.zeros(10)
        for _ in range(200):
            x, state = adam_step(x, 2 * (x - c), state, cfg)
        assert np.linalg.norm(x - c) < 1e-2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(3), np.zeros(4), AdamState.zeros(3), OptConfig())


def small_target_and_init(rng, canvas=16):
    init = random_sketch(rng, n=2, canvas=(canvas, canvas))
    target = composite_to_rgb(render(init, CFG32))
    return target, init


class TestRunSingle:
    def test_infinite_delta_stops_at_first_comparison(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, converge_delta=np.inf, eval_every=10, max_iters=100)
        res = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32)
        assert res.stop_reason is StopReason.CONVERGED
        assert res.eval_losses[-1][0] == 10

    def test_single_iteration_cap(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, max_iters=1, converge_delta=0.0)
        res = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32)
        assert res.stop_reason is StopReason.MAX_ITERS
        assert [i for i, _ in res.eval_losses] == [0, 1]

    def test_realizable_target_converges_immediately(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, eval_every=10, max_iters=50)
        res = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32)
        assert res.eval_losses[0] == (0, 0.0)
        assert res.stop_reason is StopReason.CONVERGED

    def test_deterministic_trace(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, max_iters=30, converge_delta=0.0)
        a = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32, seed=4)
        b = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32, seed=4)
        assert a.eval_losses == b.eval_losses
        assert a.final_sketch == b.final_sketch

    def test_eval_iterations_strictly_increasing(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, max_iters=25, converge_delta=0.0, eval_every=10)
        res = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32)
        iters = [i for i, _ in res.eval_losses]
        assert iters == sorted(set(iters)) and iters[-1] == 25

    def test_snapshots_opt_in(self, rng):
        target, init = small_target_and_init(rng)
        cfg = OptConfig(lr=0.1, max_iters=20, converge_delta=0.0, snapshot_every=5)
        res = run_single(target, LossSpec(backend="l2"), init, cfg, CFG32)
        assert [i for i, _ in res.snapshots] == [0, 5, 10, 15, 20]
        cfg = OptConfig(lr=0.1, max_iters=20, converge_delta=0.0)
        assert run_single(target, LossSpec(backend="l2"), init, cfg, CFG32).snapshots is None

    def test_remote_spec_requires_backend(self, rng):
        target, init = small_target_and_init(rng)
        with pytest.raises(ValueError, match="session"):
            run_single(target, LossSpec(backend="remote"), init, OptConfig(), CFG32)

    def test_convergence_rule_synthetic_schedule(self, rng):
        # Successive-eval differences: 0.25, 2e-5, then 2**-17 < 1e-5 -> stop
        # exactly at iteration 30.
        schedule = {0: 1.0, 10: 0.75, 20: 0.75 - 2e-5, 30: 0.75 - 2e-5 - 2.0**-17}
        _, init = small_target_and_init(rng)
        backend = ScriptedBackend(schedule)
        cfg = OptConfig(eval_every=10, converge_delta=1e-5, max_iters=100)
        res = run_single(np.zeros((16, 16, 3)), backend, init, cfg, CFG32)
        assert res.stop_reason is StopReason.CONVERGED
        assert res.eval_losses[-1][0] == 30
        assert len(res.eval_losses) == 4

    def test_transport_error_aborts_with_partial_trace(self, rng):
        class DyingBackend(ScriptedBackend):
            def evaluate(self, image, *, augment_views=0, seed=0):
                if self.iteration >= 12:
                    raise TransportError("sidecar went away")
                return super().evaluate(image, augment_views=augment_views, seed=seed)

        _, init = small_target_and_init(rng)
        backend = DyingBackend({i: 1.0 - i * 0.01 for i in range(0, 101, 10)})
        cfg = OptConfig(eval_every=10, converge_delta=0.0, max_iters=100)
        res = run_single(np.zeros((16, 16, 3)), backend, init, cfg, CFG32)
        assert res.stop_reason is StopReason.ABORTED
        assert res.eval_losses == [(0, 1.0), (10, 0.9)]

    def test_nonfinite_gradient_raises(self, rng):
        class NanBackend:
            def evaluate(self, image, *, augment_views=0, seed=0):
                grad = np.zeros_like(image)
                grad[:, :, 0] = 1e308
                grad[:, :, 1] = 1e308  # summed over channels -> inf
                return LossReport(1.0, 0.0, 1.0, grad)

        _, init = small_target_and_init(rng)
        with np.errstate(over="ignore"), pytest.raises(RuntimeError, match="non-finite"):
            run_single(np.zeros((16, 16, 3)), NanBackend(), init,
                       OptConfig(max_iters=5, converge_delta=0.0), CFG32)


class TestRunMultiSeed:
    def test_single_seed_is_best(self, rng):
        target, init = small_target_and_init(rng)
        dist = DistributionMap(np.full((16, 16), 1 / 256))
        cfg = OptConfig(lr=0.1, max_iters=10, converge_delta=0.0, seeds=1)
        best, results = run_multi_seed(target, LossSpec(backend="l2"), dist, 2, 3, cfg, CFG32)
        assert len(results) == 1 and best is results[0]

    def test_tie_breaks_to_lowest_seed(self, rng):
        dist = DistributionMap(np.full((16, 16), 1 / 256))
        cfg = OptConfig(eval_every=10, converge_delta=np.inf, seeds=3, max_iters=10)
        make = lambda seed: ScriptedBackend({0: 0.5, 10: 0.5})
        best, results = run_multi_seed(np.zeros((16, 16, 3)), make, dist, 2, 3, cfg, CFG32)
        assert [r.final_eval_loss for r in results] == [0.5, 0.5, 0.5]
        assert best.seed == results[0].seed

    def test_best_is_argmin_of_final_eval(self, rng):
        target, _ = small_target_and_init(rng)
        dist = DistributionMap(np.full((16, 16), 1 / 256))
        cfg = OptConfig(lr=0.1, max_iters=30, converge_delta=0.0, seeds=3)
        best, results = run_multi_seed(target, LossSpec(backend="l2"), dist, 2, 3, cfg, CFG32)
        assert best.final_eval_loss == min(r.final_eval_loss for r in results)

    def test_all_aborted_raises(self, rng):
        class DeadBackend:
            spec = LossSpec(backend="l2", augment_views=1)

            def evaluate(self, image, *, augment_views=0, seed=0):
                raise TransportError("down")

        dist = DistributionMap(np.full((16, 16), 1 / 256))
        cfg = OptConfig(seeds=2, max_iters=10)
        with pytest.raises(RuntimeError, match="all seeds aborted"):
            run_multi_seed(np.zeros((16, 16, 3)), lambda seed: DeadBackend(),
                           dist, 2, 3, cfg, CFG32)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptConfig(lr=0.0)
        with pytest.raises(ValueError):
            OptConfig(max_iters=0)
        with pytest.raises(ValueError):
            OptConfig(eval_every=0)
        with pytest.raises(ValueError):
            OptConfig(converge_delta=-1.0)
        with pytest.raises(ValueError):
            OptConfig(seeds=0)
