"""Differentiable stroke rasterizer.

Renders a sketch to an anti-aliased grayscale image and pulls per-pixel
loss gradients back to the control-point coordinates. Soft coverage comes
from a logistic of the distance to the flattened stroke polyline; strokes
composite by multiplying transmittances, which is order-independent and
smooth. Both directions are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import DEFAULT_SAMPLES, Sketch, bernstein_weights

DEFAULT_SOFTNESS = 0.7


@dataclass(frozen=True)
class RasterConfig:
    """Rendering parameters.

    resolution: (width, height) in pixels, a single int for a square
        canvas, or None to use the sketch's own canvas size.
    softness: logistic edge falloff in pixels; must be > 0.
    samples_per_curve: polyline samples for every stroke, or None for the
        per-degree defaults (32 cubic / 16 quadratic / 2 linear).
    """

    resolution: int | tuple[int, int] | None = None
    softness: float = DEFAULT_SOFTNESS
    samples_per_curve: int | None = None

    def __post_init__(self):
        if self.softness <= 0:
            raise ValueError(f"softness must be > 0, got {self.softness}")
        if self.samples_per_curve is not None and self.samples_per_curve < 2:
            raise ValueError("samples_per_curve must be >= 2")

    def canvas(self, sketch: Sketch) -> tuple[int, int]:
        if self.resolution is None:
            return sketch.canvas_size
        if isinstance(self.resolution, int):
            if self.resolution <= 0:
                raise ValueError("resolution must be positive")
            return self.resolution, self.resolution
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValueError("resolution must be positive")
        return int(w), int(h)


def kernel_name() -> str:
    """Which kernel implementation is active ('cython' or 'numpy')."""
    return _kernels.active_name


def _flatten_sketch(sketch: Sketch, config: RasterConfig):
    """Sample all strokes; returns (points, offsets, widths, weights-per-stroke)."""
    chunks, weights, offsets = [], [], [0]
    for s in sketch.strokes:
        samples = config.samples_per_curve or DEFAULT_SAMPLES[s.degree]
        ts = np.linspace(0.0, 1.0, samples)
        w = bernstein_weights(s.degree, ts)
        chunks.append(w @ s.as_array())
        weights.append(w)
        offsets.append(offsets[-1] + samples)
    points = np.ascontiguousarray(np.concatenate(chunks))
    return (points, np.asarray(offsets, dtype=np.int64),
            np.asarray([s.width for s in sketch.strokes], dtype=np.float64), weights)


def render(sketch: Sketch, config: RasterConfig = RasterConfig()) -> np.ndarray:
    """Rasterize to a (height, width) float64 image in [0, 1] (1.0 = white)."""
    cw, ch = config.canvas(sketch)
    points, offsets, widths, _ = _flatten_sketch(sketch, config)
    return _kernels.active.render(points, offsets, widths, cw, ch, config.softness)


def render_backward(sketch: Sketch, config: RasterConfig, pixel_grad: np.ndarray) -> np.ndarray:
    """Gradient of loss = sum(pixel_grad * render(sketch)) w.r.t. the flat params.

    Returns a vector laid out like geometry.to_params. pixel_grad must have
    the shape render() produces for this sketch/config.
    """
    cw, ch = config.canvas(sketch)
    pixel_grad = np.ascontiguousarray(pixel_grad, dtype=np.float64)
    if pixel_grad.shape != (ch, cw):
        raise ValueError(f"pixel_grad shape {pixel_grad.shape} != render shape {(ch, cw)}")
    points, offsets, widths, weights = _flatten_sketch(sketch, config)
    grad_pts = _kernels.active.render_backward(
        points, offsets, widths, cw, ch, config.softness, pixel_grad)
    # Polyline samples are linear in the control points, so the pullback is
    # just the transposed Bernstein weight matrix per stroke.
    parts = [w.T @ grad_pts[offsets[i]:offsets[i + 1]] for i, w in enumerate(weights)]
    return np.concatenate([p.ravel() for p in parts])


def composite_to_rgb(image: np.ndarray) -> np.ndarray:
    """Replicate a single-channel (H, W) image into (H, W, 3)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a single-channel (H, W) image, got shape {image.shape}")
    return np.repeat(image[:, :, None], 3, axis=2)


def composite_to_rgb_backward(grad_rgb: np.ndarray) -> np.ndarray:
    """Adjoint of composite_to_rgb: per-pixel sum over channels."""
    grad_rgb = np.asarray(grad_rgb)
    if grad_rgb.ndim != 3 or grad_rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) gradient, got shape {grad_rgb.shape}")
    return grad_rgb.sum(axis=2)
