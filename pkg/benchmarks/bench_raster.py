"""Compares the compiled rasterizer kernel against the numpy fallback.

Run from the repo root:  python benchmarks/bench_raster.py
"""

import time

import numpy as np

from strokeopt import RasterConfig, Sketch, Stroke
from strokeopt._kernels import cykernel, numpy_kernel
from strokeopt.raster import _flatten_sketch


def random_sketch(rng, n, canvas, degree=3, width=1.5):
    strokes = []
    for _ in range(n):
        pts = rng.uniform(2.0, canvas - 2.0, size=(degree + 1, 2))
        strokes.append(Stroke(tuple(map(tuple, pts)), width=width))
    return Sketch(tuple(strokes), (canvas, canvas))


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    if cykernel is None:
        raise SystemExit("compiled kernel not built; nothing to compare")
    rng = np.random.default_rng(0)
    cfg = RasterConfig(softness=0.7)
    print(f"{'case':<28} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for canvas, n in [(64, 4), (224, 16), (224, 64)]:
        sk = random_sketch(rng, n, canvas)
        pts, off, wid, _ = _flatten_sketch(sk, cfg)
        grad = rng.normal(size=(canvas, canvas))
        repeats = 5 if canvas <= 64 else 3

        args = (pts, off, wid, canvas, canvas, cfg.softness)
        t_np = timeit(lambda: numpy_kernel.render(*args), repeats)
        t_cy = timeit(lambda: cykernel.render(*args), repeats)
        np.testing.assert_allclose(numpy_kernel.render(*args), cykernel.render(*args),
                                   atol=1e-12)
        print(f"{f'forward  {canvas}px n={n}':<28} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
              f"{t_np / t_cy:>7.1f}x")

        t_np = timeit(lambda: numpy_kernel.render_backward(*args, grad), repeats)
        t_cy = timeit(lambda: cykernel.render_backward(*args, grad), repeats)
        np.testing.assert_allclose(numpy_kernel.render_backward(*args, grad),
                                   cykernel.render_backward(*args, grad), atol=1e-10)
        print(f"{f'backward {canvas}px n={n}':<28} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
              f"{t_np / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()
