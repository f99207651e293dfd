"""Shared builders and the finite-difference gradient harness."""

from __future__ import annotations

import numpy as np
import pytest

from strokeopt import RasterConfig, Sketch, Stroke, from_params, render, render_backward, to_params
from strokeopt._kernels import numpy_kernel
from strokeopt.raster import _flatten_sketch


def random_stroke(rng: np.random.Generator, canvas=(32, 32), degree=None,
                  width=(0.8, 3.0)) -> Stroke:
    if degree is None:
        degree = int(rng.integers(1, 4))
    w, h = canvas
    pts = rng.uniform([2.0, 2.0], [w - 2.0, h - 2.0], size=(degree + 1, 2))
    return Stroke(tuple(map(tuple, pts)), width=float(rng.uniform(*width)))


def random_sketch(rng: np.random.Generator, n=3, canvas=(32, 32), degree=None) -> Sketch:
    return Sketch(tuple(random_stroke(rng, canvas, degree) for _ in range(n)), canvas)


def _stroke_of_param(sketch: Sketch, j: int) -> int:
    lo = 0
    for i, s in enumerate(sketch.strokes):
        hi = lo + 2 * len(s.points)
        if j < hi:
            return i
        lo = hi
    raise IndexError(j)


def _tie_affected(sketch: Sketch, config: RasterConfig, j: int, h: float) -> bool:
    """True if perturbing param j by +-h hits a kink of the distance field:
    a pixel's nearest segment flips, a pixel crosses the stroke's band
    boundary, or the centerline sweeps (near) a pixel center (the distance
    cone's apex). Finite differences are meaningless across any of these."""
    cw, ch = config.canvas(sketch)
    si = _stroke_of_param(sketch, j)
    p = to_params(sketch)
    states = []
    for s in (h, -h):
        q = p.copy()
        q[j] += s
        pts, off, wid, _ = _flatten_sketch(from_params(q, sketch), config)
        states.append(numpy_kernel.nearest_segment_map(pts, off, wid, cw, ch, config.softness, si))
    (band_a, seg_a, d_a), (band_b, seg_b, d_b) = states
    if band_a != band_b:
        return True
    if band_a is None:
        return False
    if not np.array_equal(seg_a, seg_b):
        return True
    # A vertex moves at most 1 px per unit of the parameter, so a centerline
    # crossing inside the interval leaves d <= 2h at both endpoints; 4h also
    # flags near-misses whose curvature wrecks the difference quotient.
    return bool(min(d_a.min(), d_b.min()) < 4.0 * h)


def check_gradients(sketch: Sketch, config: RasterConfig, pixel_grad: np.ndarray,
                    h: float = 1e-3, rtol: float = 1e-3):
    """Compare render_backward to central differences of sum(pixel_grad * render).

    Returns (bad, skipped, total): parameter counts failing rtol, skipped as
    tie-affected, and checked overall.
    """
    analytic = render_backward(sketch, config, pixel_grad)
    p0 = to_params(sketch)
    bad = skipped = 0
    for j in range(p0.size):
        pp, pm = p0.copy(), p0.copy()
        pp[j] += h
        pm[j] -= h
        lp = float((pixel_grad * render(from_params(pp, sketch), config)).sum())
        lm = float((pixel_grad * render(from_params(pm, sketch), config)).sum())
        fd = (lp - lm) / (2.0 * h)
        a = analytic[j]
        if abs(a - fd) <= max(rtol * max(abs(a), abs(fd)), 1e-7):
            continue
        if _tie_affected(sketch, config, j, h):
            skipped += 1
        else:
            bad += 1
    return bad, skipped, p0.size


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
