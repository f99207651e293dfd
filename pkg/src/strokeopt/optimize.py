"""Gradient-descent loop over stroke parameters.

Adam drives the flat control-point vector against a loss backend. Every
eval_every iterations the loss is re-measured without augmentation; the
run stops once two successive evaluations differ by less than
converge_delta, or at max_iters. Several seeds run independently and the
sketch with the lowest final evaluation loss wins.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Sketch, from_params, to_params
from .loss import LossReport, LossSpec, make_native_backend
from .protocol import TransportError
from .raster import RasterConfig, composite_to_rgb, composite_to_rgb_backward, render, render_backward
from .saliency import DistributionMap, sample_initial_sketch

log = logging.getLogger("strokeopt")


@dataclass(frozen=True)
class OptConfig:
    lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_iters: int = 2000
    eval_every: int = 10
    converge_delta: float = 1e-5
    seeds: int = 3
    snapshot_every: int | None = None
    init_radius: float = 0.05
    stroke_width: float = 1.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.converge_delta < 0:
            raise ValueError("converge_delta must be >= 0")
        if self.seeds < 1:
            raise ValueError("need at least one seed")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


class StopReason(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    ABORTED = "aborted"


class AbortedRunError(RuntimeError):
    """The backend died before producing even one evaluation."""


@dataclass
class OptRunResult:
    seed: int
    final_sketch: Sketch
    eval_losses: list[tuple[int, float]]
    stop_reason: StopReason
    snapshots: list[tuple[int, Sketch]] | None = None
    reports: list[tuple[int, LossReport]] = field(default_factory=list, repr=False)

    @property
    def final_eval_loss(self) -> float:
        return self.eval_losses[-1][1]


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              config: OptConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh (params, state)."""
    if params.shape != grads.shape:
        raise ValueError(f"param/grad shapes differ: {params.shape} vs {grads.shape}")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    new_params = params - config.lr * m_hat / (np.sqrt(v_hat) + config.eps_adam)
    return new_params, AdamState(m, v, t)


def _resolve_backend(loss, target: np.ndarray):
    """Accepts a LossSpec (native backends only) or a ready backend object."""
    if isinstance(loss, LossSpec):
        if loss.backend == "remote":
            raise ValueError("remote losses need a live session; pass a RemoteBackend")
        return make_native_backend(loss, target), loss.augment_views
    views = loss.spec.augment_views if hasattr(loss, "spec") else 0
    return loss, views


def run_single(target: np.ndarray, loss, init: Sketch, config: OptConfig,
               raster_config: RasterConfig | None = None, seed: int = 0) -> OptRunResult:
    """Optimize one initialization until convergence or the iteration cap.

    target is the (H, W, 3) image in [0, 1] the loss compares against.
    Deterministic for a given seed and a native backend. A transport
    failure from a remote backend aborts the run but keeps the trace.
    """
    rc = raster_config or RasterConfig()
    backend, augment_views = _resolve_backend(loss, target)

    params = to_params(init)
    state = AdamState.zeros(params.size)
    evals: list[tuple[int, float]] = []
    reports: list[tuple[int, LossReport]] = []
    snapshots: list[tuple[int, Sketch]] | None = [] if config.snapshot_every else None

    def eval_loss(p: np.ndarray) -> LossReport:
        rgb = composite_to_rgb(render(from_params(p, init), rc))
        return backend.evaluate(rgb, augment_views=0, seed=0)

    k = 0
    stop = None
    try:
        while True:
            if k % config.eval_every == 0:
                report = eval_loss(params)
                evals.append((k, report.total))
                reports.append((k, report))
                if len(evals) >= 2 and abs(evals[-1][1] - evals[-2][1]) < config.converge_delta:
                    stop = StopReason.CONVERGED
                    break
            if snapshots is not None and k % config.snapshot_every == 0:
                snapshots.append((k, from_params(params, init)))
            if k >= config.max_iters:
                stop = StopReason.MAX_ITERS
                break

            sketch = from_params(params, init)
            rgb = composite_to_rgb(render(sketch, rc))
            step_seed = seed * 1_000_003 + k + 1  # deterministic, per-step
            report = backend.evaluate(rgb, augment_views=augment_views, seed=step_seed)
            grads = render_backward(sketch, rc, composite_to_rgb_backward(report.pixel_grad))
            if not np.all(np.isfinite(grads)):
                raise RuntimeError(
                    f"non-finite gradient at iteration {k} (loss {report.total}); aborting")
            params, state = adam_step(params, grads, state, config)
            k += 1
    except TransportError as exc:
        log.warning("seed %d aborted at iteration %d: %s", seed, k, exc)
        stop = StopReason.ABORTED

    if stop is not StopReason.ABORTED and (not evals or evals[-1][0] != k):
        report = eval_loss(params)
        evals.append((k, report.total))
        reports.append((k, report))
    if not evals:
        raise AbortedRunError(f"seed {seed} aborted before the first evaluation")
    return OptRunResult(seed, from_params(params, init), evals, stop,
                        snapshots=snapshots, reports=reports)


def run_multi_seed(target: np.ndarray, loss, dist: DistributionMap, n: int,
                   degree: int, config: OptConfig,
                   raster_config: RasterConfig | None = None,
                   seed_base: int = 0) -> tuple[OptRunResult, list[OptRunResult]]:
    """Run config.seeds independent initializations; lowest final evaluation
    loss wins, ties broken by the lowest seed.

    `loss` may be a LossSpec (native), a backend, or a callable seed -> backend
    (remote runs need one session per seed).
    """
    results = []
    for i in range(config.seeds):
        seed = seed_base + i
        init = sample_initial_sketch(dist, n, degree, radius=config.init_radius,
                                     rng_seed=seed, width=config.stroke_width)
        seed_loss = loss(seed) if callable(loss) and not hasattr(loss, "evaluate") else loss
        try:
            result = run_single(target, seed_loss, init, config, raster_config, seed=seed)
        except AbortedRunError as exc:
            log.warning("%s", exc)
            continue
        log.info("seed %d: %s after %d iterations, eval loss %.6g", seed,
                 result.stop_reason.value, result.eval_losses[-1][0], result.final_eval_loss)
        results.append(result)

    alive = [r for r in results if r.stop_reason is not StopReason.ABORTED]
    if not alive:
        raise RuntimeError("all seeds aborted")
    best = alive[0]
    for r in alive[1:]:
        if r.final_eval_loss < best.final_eval_loss:
            best = r
    return best, results
