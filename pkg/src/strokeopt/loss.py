"""Loss backends.

Every backend maps a rendered sketch image to a scalar loss plus the
per-pixel gradient of that loss; the rasterizer's backward pass then
carries the gradient on to the control points. Native backends (plain and
blurred L2) run in-process and keep the pipeline usable stand-alone; the
semantic CLIP loss lives in a sidecar process behind the same interface
(see remote.py).

The combined objective is geometric + w_s * semantic with w_s = 0.1 by
default; native backends have no semantic part and report it as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

DEFAULT_SEMANTIC_WEIGHT = 0.1
DEFAULT_AUGMENT_VIEWS = 4
DEFAULT_BLUR_SIGMAS = (0.0, 2.0)

NATIVE_BACKENDS = ("l2", "blur")
BACKENDS = NATIVE_BACKENDS + ("remote",)


@dataclass(frozen=True)
class LossSpec:
    """Which backend to use and how to weight/augment it.

    endpoint is only meaningful for the remote backend ("cmd:<command>" or
    "tcp:<host>:<port>"); blur_sigmas only for the blurred backend (a 0
    entry means an un-blurred level).
    """

    backend: str = "l2"
    semantic_weight: float = DEFAULT_SEMANTIC_WEIGHT
    augment_views: int = DEFAULT_AUGMENT_VIEWS
    blur_sigmas: tuple[float, ...] = DEFAULT_BLUR_SIGMAS
    endpoint: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}, expected one of {BACKENDS}")
        if not np.isfinite(self.semantic_weight) or self.semantic_weight < 0:
            raise ValueError(f"semantic_weight must be finite and >= 0, got {self.semantic_weight}")
        if self.augment_views < 0:
            raise ValueError("augment_views must be >= 0")
        if any(s < 0 for s in self.blur_sigmas):
            raise ValueError("blur sigmas must be >= 0")


@dataclass(frozen=True)
class LossReport:
    """Scalar loss split into parts, plus d(total)/d(pixel).

    total = geometric + semantic_weight * semantic for splitting backends;
    native backends report semantic = 0 and total = geometric.
    """

    total: float
    semantic: float
    geometric: float
    pixel_grad: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.total) and np.isfinite(self.semantic) and np.isfinite(self.geometric)):
            raise ValueError("loss values must be finite")
        if not np.all(np.isfinite(self.pixel_grad)):
            raise ValueError("pixel gradient must be finite")


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def pixel_l2(sketch_img: np.ndarray, target: np.ndarray) -> LossReport:
    """Mean squared pixel difference; gradient 2(s - t)/N."""
    sketch_img = np.asarray(sketch_img, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(sketch_img, target)
    diff = sketch_img - target
    loss = float(np.mean(diff * diff))
    return LossReport(loss, 0.0, loss, 2.0 * diff / diff.size)


def blurred_l2(sketch_img: np.ndarray, target: np.ndarray,
               sigmas: tuple[float, ...] = DEFAULT_BLUR_SIGMAS) -> LossReport:
    """Sum over blur levels of the MSE between Gaussian-blurred images.

    A coarse stand-in for intermediate-feature losses that stays fully
    native. Gradient per level is the blur applied again to the residual
    (the reflect-padded Gaussian operator is self-adjoint); sigma 0 is the
    identity level and reduces to pixel_l2.
    """
    sketch_img = np.asarray(sketch_img, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(sketch_img, target)
    if len(sigmas) == 0:
        raise ValueError("need at least one blur level")
    spatial_only = (lambda s: (s, s, 0)) if sketch_img.ndim == 3 else (lambda s: s)
    n = sketch_img.size
    total = 0.0
    grad = np.zeros_like(sketch_img)
    for sigma in sigmas:
        if sigma == 0.0:
            resid = sketch_img - target
            total += float(np.mean(resid * resid))
            grad += 2.0 * resid / n
        else:
            resid = (gaussian_filter(sketch_img, spatial_only(sigma))
                     - gaussian_filter(target, spatial_only(sigma)))
            total += float(np.mean(resid * resid))
            grad += 2.0 * gaussian_filter(resid, spatial_only(sigma)) / n
    return LossReport(total, 0.0, total, grad)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - u.v / (|u||v|); in [0, 2], zero iff the vectors are parallel."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def combine(geometric: float, semantic: float, w_s: float) -> float:
    """The optimization objective: geometric + w_s * semantic."""
    if not (np.isfinite(geometric) and np.isfinite(semantic) and np.isfinite(w_s)):
        raise ValueError("combine needs finite inputs")
    return float(geometric + w_s * semantic)


class PixelL2Backend:
    """Native backend: plain pixel MSE against a fixed target.

    Augmentation only exists inside the sidecar's autograd graph, so the
    native backends ignore augment_views/seed.
    """

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def evaluate(self, image: np.ndarray, *, augment_views: int = 0, seed: int = 0) -> LossReport:
        return pixel_l2(image, self.target)

    def close(self):
        pass


class BlurredL2Backend:
    """Native backend: multi-level blurred MSE against a fixed target."""

    def __init__(self, target: np.ndarray, sigmas: tuple[float, ...] = DEFAULT_BLUR_SIGMAS):
        self.target = np.asarray(target, dtype=np.float64)
        self.sigmas = tuple(sigmas)

    def evaluate(self, image: np.ndarray, *, augment_views: int = 0, seed: int = 0) -> LossReport:
        return blurred_l2(image, self.target, self.sigmas)

    def close(self):
        pass


def make_native_backend(spec: LossSpec, target: np.ndarray):
    if spec.backend == "l2":
        return PixelL2Backend(target)
    if spec.backend == "blur":
        return BlurredL2Backend(target, spec.blur_sigmas)
    raise ValueError(f"{spec.backend!r} is not a native backend")
