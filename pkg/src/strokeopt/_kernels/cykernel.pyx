# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterizer kernels.

Loop-level twin of numpy_kernel: same forward definition (logistic
coverage of polyline distance, transmittance product, banded support),
same tie rule (lowest segment index), same zero-aware backward. Kept in
lockstep with the numpy fallback; the test suite cross-checks the two.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor, sqrt

cnp.import_array()

DEF BAND_SOFTNESS_MULTIPLE = 6.0
DEF APEX_EPS = 1e-12


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline bint _band(const double[:, ::1] pts, Py_ssize_t lo, Py_ssize_t hi,
                       double reach, int canvas_w, int canvas_h,
                       int* c0, int* c1, int* r0, int* r1) noexcept nogil:
    """Inflated bbox of vertices pts[lo:hi] as inclusive pixel ranges."""
    cdef double xmin = pts[lo, 0], xmax = pts[lo, 0]
    cdef double ymin = pts[lo, 1], ymax = pts[lo, 1]
    cdef Py_ssize_t k
    for k in range(lo + 1, hi):
        if pts[k, 0] < xmin: xmin = pts[k, 0]
        if pts[k, 0] > xmax: xmax = pts[k, 0]
        if pts[k, 1] < ymin: ymin = pts[k, 1]
        if pts[k, 1] > ymax: ymax = pts[k, 1]
    cdef double cf0 = ceil(xmin - reach - 0.5)
    cdef double cf1 = floor(xmax + reach - 0.5)
    cdef double rf0 = ceil(ymin - reach - 0.5)
    cdef double rf1 = floor(ymax + reach - 0.5)
    if cf0 < 0: cf0 = 0
    if rf0 < 0: rf0 = 0
    if cf1 > canvas_w - 1: cf1 = canvas_w - 1
    if rf1 > canvas_h - 1: rf1 = canvas_h - 1
    if cf0 > cf1 or rf0 > rf1:
        return False
    c0[0] = <int>cf0; c1[0] = <int>cf1
    r0[0] = <int>rf0; r1[0] = <int>rf1
    return True


cdef inline double _nearest(const double[:, ::1] pts, Py_ssize_t lo, Py_ssize_t hi,
                            double px, double py,
                            Py_ssize_t* seg, double* tout,
                            double* rx, double* ry) noexcept nogil:
    """Distance from (px, py) to the polyline pts[lo:hi]; first minimum wins."""
    cdef double best = -1.0
    cdef double ax, ay, vx, vy, len2, ex, ey, t, qx, qy, d2
    cdef Py_ssize_t k
    for k in range(lo, hi - 1):
        ax = pts[k, 0]; ay = pts[k, 1]
        vx = pts[k + 1, 0] - ax; vy = pts[k + 1, 1] - ay
        len2 = vx * vx + vy * vy
        ex = px - ax; ey = py - ay
        if len2 > 0.0:
            t = (ex * vx + ey * vy) / len2
            if t < 0.0: t = 0.0
            elif t > 1.0: t = 1.0
        else:
            t = 0.0
        qx = ex - t * vx; qy = ey - t * vy
        d2 = qx * qx + qy * qy
        if best < 0.0 or d2 < best:
            best = d2
            seg[0] = k - lo
            tout[0] = t
            rx[0] = qx; ry[0] = qy
    return sqrt(best)


def render(const double[:, ::1] points, const cnp.int64_t[::1] offsets,
           const double[::1] widths, int canvas_w, int canvas_h, double softness):
    out = np.ones((canvas_h, canvas_w), dtype=np.float64)
    cdef double[:, ::1] img = out
    cdef Py_ssize_t n = widths.shape[0]
    cdef Py_ssize_t i, lo, hi, seg
    cdef int c0, c1, r0, r1, r, c
    cdef double w, reach, d, cov, t, rx, ry
    with nogil:
        for i in range(n):
            lo = offsets[i]; hi = offsets[i + 1]
            w = widths[i]
            reach = 0.5 * w + BAND_SOFTNESS_MULTIPLE * softness
            if not _band(points, lo, hi, reach, canvas_w, canvas_h, &c0, &c1, &r0, &r1):
                continue
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    d = _nearest(points, lo, hi, c + 0.5, r + 0.5, &seg, &t, &rx, &ry)
                    cov = _sigmoid((0.5 * w - d) / softness)
                    img[r, c] *= 1.0 - cov
    return out


def render_backward(const double[:, ::1] points, const cnp.int64_t[::1] offsets,
                    const double[::1] widths, int canvas_w, int canvas_h,
                    double softness, const double[:, ::1] pixel_grad):
    grad_out = np.zeros((points.shape[0], 2), dtype=np.float64)
    prod_arr = np.ones((canvas_h, canvas_w), dtype=np.float64)
    zeros_arr = np.zeros((canvas_h, canvas_w), dtype=np.int32)
    cdef double[:, ::1] grad_pts = grad_out
    cdef double[:, ::1] prod = prod_arr
    cdef int[:, ::1] zeros = zeros_arr
    cdef Py_ssize_t n = widths.shape[0]
    cdef Py_ssize_t i, lo, hi, seg
    cdef int c0, c1, r0, r1, r, c
    cdef double w, reach, d, cov, f, t, rx, ry
    cdef double others, g_cov, g_d, inv_d, ux, uy, ga, gb

    with nogil:
        # Pass 1: product of nonzero transmittance factors + zero counts.
        for i in range(n):
            lo = offsets[i]; hi = offsets[i + 1]
            w = widths[i]
            reach = 0.5 * w + BAND_SOFTNESS_MULTIPLE * softness
            if not _band(points, lo, hi, reach, canvas_w, canvas_h, &c0, &c1, &r0, &r1):
                continue
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    d = _nearest(points, lo, hi, c + 0.5, r + 0.5, &seg, &t, &rx, &ry)
                    cov = _sigmoid((0.5 * w - d) / softness)
                    f = 1.0 - cov
                    if f == 0.0:
                        zeros[r, c] += 1
                    else:
                        prod[r, c] *= f

        # Pass 2: leave-one-out product, then chain rule to the vertices.
        for i in range(n):
            lo = offsets[i]; hi = offsets[i + 1]
            w = widths[i]
            reach = 0.5 * w + BAND_SOFTNESS_MULTIPLE * softness
            if not _band(points, lo, hi, reach, canvas_w, canvas_h, &c0, &c1, &r0, &r1):
                continue
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    d = _nearest(points, lo, hi, c + 0.5, r + 0.5, &seg, &t, &rx, &ry)
                    cov = _sigmoid((0.5 * w - d) / softness)
                    f = 1.0 - cov
                    if f == 0.0:
                        others = prod[r, c] if zeros[r, c] == 1 else 0.0
                    else:
                        others = prod[r, c] / f if zeros[r, c] == 0 else 0.0
                    g_cov = -pixel_grad[r, c] * others
                    g_d = g_cov * cov * f * (-1.0 / softness)
                    if d > APEX_EPS and g_d != 0.0:
                        inv_d = 1.0 / d
                        ux = rx * inv_d; uy = ry * inv_d
                        ga = -(1.0 - t) * g_d
                        gb = -t * g_d
                        grad_pts[lo + seg, 0] += ga * ux
                        grad_pts[lo + seg, 1] += ga * uy
                        grad_pts[lo + seg + 1, 0] += gb * ux
                        grad_pts[lo + seg + 1, 1] += gb * uy
    return grad_out
