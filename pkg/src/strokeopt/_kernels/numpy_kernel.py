"""Vectorized numpy rasterizer kernels.

Fallback used when the compiled extension is unavailable; also the
reference the compiled kernel is cross-checked against. Both kernels share
the exact same forward definition:

  pixel value = prod over strokes of (1 - coverage)
  coverage    = sigmoid((width/2 - d) / softness)
  d           = distance from the pixel center to the stroke polyline,
                taken over the nearest segment (lowest index wins ties)

Per-pixel work is restricted to the stroke's bounding box inflated by
width/2 + 6*softness; outside the band coverage is exactly zero. The band
is part of the forward definition, so the backward pass uses it too.

Pixel (row r, col c) has its center at (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

BAND_SOFTNESS_MULTIPLE = 6.0

# Pixels closer to the centerline than this get no positional gradient:
# the point-distance cone is non-differentiable at its apex.
_APEX_EPS = 1e-12


def stroke_band(poly: np.ndarray, width: float, softness: float,
                canvas_w: int, canvas_h: int) -> tuple[int, int, int, int] | None:
    """Integer pixel rectangle (c0, c1, r0, r1), inclusive, or None if empty."""
    reach = 0.5 * width + BAND_SOFTNESS_MULTIPLE * softness
    x0 = np.min(poly[:, 0]) - reach
    x1 = np.max(poly[:, 0]) + reach
    y0 = np.min(poly[:, 1]) - reach
    y1 = np.max(poly[:, 1]) + reach
    c0 = max(int(np.ceil(x0 - 0.5)), 0)
    c1 = min(int(np.floor(x1 - 0.5)), canvas_w - 1)
    r0 = max(int(np.ceil(y0 - 0.5)), 0)
    r1 = min(int(np.floor(y1 - 0.5)), canvas_h - 1)
    if c0 > c1 or r0 > r1:
        return None
    return c0, c1, r0, r1


def _band_centers(band: tuple[int, int, int, int]) -> np.ndarray:
    c0, c1, r0, r1 = band
    xs = np.arange(c0, c1 + 1, dtype=np.float64) + 0.5
    ys = np.arange(r0, r1 + 1, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def polyline_distance(poly: np.ndarray, q: np.ndarray):
    """Distance from points q (K, 2) to the polyline (m+1, 2).

    Returns (d, seg, t, res):
      d    (K,)   distance to the nearest segment
      seg  (K,)   index of that segment (first minimum on ties)
      t    (K,)   clamped projection parameter on that segment
      res  (K, 2) q - closest point
    """
    a = poly[:-1]
    v = poly[1:] - a
    len2 = np.einsum("md,md->m", v, v)
    safe = np.where(len2 > 0.0, len2, 1.0)
    e = q[:, None, :] - a[None, :, :]
    t = np.einsum("kmd,md->km", e, v) / safe
    t[:, len2 == 0.0] = 0.0
    np.clip(t, 0.0, 1.0, out=t)
    res = e - t[:, :, None] * v[None, :, :]
    d2 = np.einsum("kmd,kmd->km", res, res)
    seg = np.argmin(d2, axis=1)
    rows = np.arange(q.shape[0])
    return np.sqrt(d2[rows, seg]), seg, t[rows, seg], res[rows, seg]


def _coverage(poly: np.ndarray, width: float, softness: float, q: np.ndarray):
    d, seg, t, res = polyline_distance(poly, q)
    cov = expit((0.5 * width - d) / softness)
    return cov, d, seg, t, res


def render(points: np.ndarray, offsets: np.ndarray, widths: np.ndarray,
           canvas_w: int, canvas_h: int, softness: float) -> np.ndarray:
    """Forward pass: (canvas_h, canvas_w) float64 image in [0, 1], white = 1."""
    img = np.ones((canvas_h, canvas_w), dtype=np.float64)
    for i in range(len(widths)):
        poly = points[offsets[i]:offsets[i + 1]]
        band = stroke_band(poly, widths[i], softness, canvas_w, canvas_h)
        if band is None:
            continue
        c0, c1, r0, r1 = band
        cov, _, _, _, _ = _coverage(poly, widths[i], softness, _band_centers(band))
        img[r0:r1 + 1, c0:c1 + 1] *= (1.0 - cov).reshape(r1 - r0 + 1, c1 - c0 + 1)
    return img


def render_backward(points: np.ndarray, offsets: np.ndarray, widths: np.ndarray,
                    canvas_w: int, canvas_h: int, softness: float,
                    pixel_grad: np.ndarray) -> np.ndarray:
    """d(loss)/d(polyline vertices) for loss = sum(pixel_grad * image).

    The product over strokes is differentiated with a zero-aware
    leave-one-out scheme so fully saturated coverage (factor exactly 0)
    stays well defined.
    """
    n = len(widths)
    grad_pts = np.zeros_like(points)

    # Pass 1: per-stroke coverage plus the zero-aware running product.
    prod = np.ones((canvas_h, canvas_w), dtype=np.float64)
    zeros = np.zeros((canvas_h, canvas_w), dtype=np.int64)
    cached = []
    for i in range(n):
        poly = points[offsets[i]:offsets[i + 1]]
        band = stroke_band(poly, widths[i], softness, canvas_w, canvas_h)
        if band is None:
            cached.append(None)
            continue
        q = _band_centers(band)
        cov, d, seg, t, res = _coverage(poly, widths[i], softness, q)
        cached.append((band, q, cov, d, seg, t, res))
        c0, c1, r0, r1 = band
        f = (1.0 - cov).reshape(r1 - r0 + 1, c1 - c0 + 1)
        zero = f == 0.0
        prod[r0:r1 + 1, c0:c1 + 1] *= np.where(zero, 1.0, f)
        zeros[r0:r1 + 1, c0:c1 + 1] += zero

    # Pass 2: chain rule through coverage and the point-segment distance.
    for i in range(n):
        if cached[i] is None:
            continue
        band, q, cov, d, seg, t, res = cached[i]
        c0, c1, r0, r1 = band
        f = 1.0 - cov
        p_band = prod[r0:r1 + 1, c0:c1 + 1].ravel()
        z_band = zeros[r0:r1 + 1, c0:c1 + 1].ravel()
        others = np.where(
            f == 0.0,
            np.where(z_band == 1, p_band, 0.0),
            np.where(z_band == 0, p_band / np.where(f == 0.0, 1.0, f), 0.0),
        )
        g_band = pixel_grad[r0:r1 + 1, c0:c1 + 1].ravel()
        g_cov = -g_band * others
        g_d = g_cov * cov * f * (-1.0 / softness)

        ok = d > _APEX_EPS
        u = np.zeros_like(res)
        u[ok] = res[ok] / d[ok, None]
        ga = (-(1.0 - t) * g_d)[:, None] * u
        gb = (-t * g_d)[:, None] * u
        base = offsets[i]
        np.add.at(grad_pts, base + seg, ga)
        np.add.at(grad_pts, base + seg + 1, gb)
    return grad_pts


def nearest_segment_map(points: np.ndarray, offsets: np.ndarray, widths: np.ndarray,
                        canvas_w: int, canvas_h: int, softness: float, stroke: int):
    """Diagnostic: (band, seg, dist) for one stroke, or Nones if off canvas.

    Used by the gradient-check harness to detect parameters whose
    perturbation flips a pixel's nearest segment, moves a pixel across the
    band boundary, or sweeps the centerline across a pixel center.
    """
    poly = points[offsets[stroke]:offsets[stroke + 1]]
    band = stroke_band(poly, widths[stroke], softness, canvas_w, canvas_h)
    if band is None:
        return None, None, None
    d, seg, _, _ = polyline_distance(poly, _band_centers(band))
    return band, seg, d
