"""Bezier stroke primitives.

A sketch is a list of strokes on a pixel-unit canvas; each stroke is a
Bezier curve of degree 1, 2 or 3 given by its control points. Only the
control-point coordinates are optimizable: width and degree stay fixed,
and the optimizer sees the whole sketch as one flat parameter vector.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

# Flattening resolution per curve degree (linear curves need no midpoints).
DEFAULT_SAMPLES = {1: 2, 2: 16, 3: 32}


@dataclass(frozen=True)
class Stroke:
    """One Bezier curve: 2 to 4 control points plus a fixed width in pixels.

    Coordinates are continuous pixel units and may lie outside the canvas
    (the optimizer does not clamp them); they must be finite.
    """

    points: tuple[tuple[float, float], ...]
    width: float = 1.5

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "width", float(self.width))
        if not 2 <= len(pts) <= 4:
            raise ValueError(f"stroke needs 2..4 control points, got {len(pts)}")
        if not all(np.isfinite(c) for p in pts for c in p):
            raise ValueError("control points must be finite")
        if not (np.isfinite(self.width) and self.width > 0):
            raise ValueError(f"stroke width must be finite and > 0, got {self.width}")

    @property
    def degree(self) -> int:
        return len(self.points) - 1

    def as_array(self) -> np.ndarray:
        """Control points as a (k, 2) float64 array."""
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class Sketch:
    """A set of strokes over a (width, height) pixel canvas."""

    strokes: tuple[Stroke, ...]
    canvas_size: tuple[int, int]
    uniform_width: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))
        object.__setattr__(self, "canvas_size", (int(self.canvas_size[0]), int(self.canvas_size[1])))
        if len(self.strokes) < 1:
            raise ValueError("a sketch needs at least one stroke")
        if any(s <= 0 for s in self.canvas_size):
            raise ValueError(f"canvas must be positive, got {self.canvas_size}")
        if self.uniform_width:
            widths = {s.width for s in self.strokes}
            if len(widths) > 1:
                raise ValueError(f"uniform_width sketch has mixed widths: {sorted(widths)}")

    @property
    def num_strokes(self) -> int:
        return len(self.strokes)

    @property
    def num_params(self) -> int:
        return sum(2 * len(s.points) for s in self.strokes)


def bernstein_weights(degree: int, ts: np.ndarray) -> np.ndarray:
    """Bernstein basis values: (len(ts), degree+1) matrix W with W[i, j] = B_j(ts[i])."""
    ts = np.asarray(ts, dtype=np.float64)
    u = 1.0 - ts
    if degree == 1:
        cols = [u, ts]
    elif degree == 2:
        cols = [u * u, 2.0 * u * ts, ts * ts]
    elif degree == 3:
        cols = [u * u * u, 3.0 * u * u * ts, 3.0 * u * ts * ts, ts * ts * ts]
    else:
        raise ValueError(f"unsupported degree {degree}")
    return np.stack(cols, axis=-1)


def eval_bezier(stroke: Stroke, t: float) -> tuple[float, float]:
    """Evaluate the stroke's Bernstein polynomial at t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    w = bernstein_weights(stroke.degree, np.asarray([t]))
    x, y = w @ stroke.as_array()[..., 0], w @ stroke.as_array()[..., 1]
    return float(x[0]), float(y[0])


def flatten(stroke: Stroke, samples: int | None = None) -> np.ndarray:
    """Uniform-t polyline approximation, as a (samples, 2) array.

    Samples at t = k/(samples-1), so the first/last rows equal the stroke
    endpoints. Each sample is polynomial in the control points, which keeps
    the polyline differentiable w.r.t. them.
    """
    if samples is None:
        samples = DEFAULT_SAMPLES[stroke.degree]
    if samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples}")
    ts = np.linspace(0.0, 1.0, samples)
    return bernstein_weights(stroke.degree, ts) @ stroke.as_array()


def to_params(sketch: Sketch) -> np.ndarray:
    """Flat float64 view of all control points (stroke-major, x/y interleaved)."""
    return np.concatenate([s.as_array().ravel() for s in sketch.strokes])


def from_params(params: np.ndarray, template: Sketch) -> Sketch:
    """Rebuild a sketch from a flat parameter vector.

    The template fixes stroke count, degrees and widths; only coordinates
    are taken from `params`. Exact inverse of `to_params`.
    """
    params = np.asarray(params, dtype=np.float64).ravel()
    if params.size != template.num_params:
        raise ValueError(f"expected {template.num_params} params, got {params.size}")
    strokes = []
    i = 0
    for s in template.strokes:
        k = len(s.points)
        pts = params[i : i + 2 * k].reshape(k, 2)
        strokes.append(dataclasses.replace(s, points=tuple(map(tuple, pts))))
        i += 2 * k
    return dataclasses.replace(template, strokes=tuple(strokes))
