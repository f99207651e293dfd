import numpy as np
import pytest

from strokeopt import (
    RasterConfig,
    Sketch,
    Stroke,
    composite_to_rgb,
    render,
    render_backward,
    to_params,
)
from strokeopt._kernels import cykernel, numpy_kernel
from strokeopt.raster import _flatten_sketch, composite_to_rgb_backward
from tests.conftest import check_gradients, random_sketch

CFG = RasterConfig(softness=0.7)


def mirror(sketch: Sketch) -> Sketch:
    w = sketch.canvas_size[0]
    strokes = tuple(
        Stroke(tuple((w - x, y) for x, y in s.points), s.width) for s in sketch.strokes
    )
    return Sketch(strokes, sketch.canvas_size)


class TestRenderForward:
    def test_offcanvas_strokes_render_white(self):
        far = Stroke(((500.0, 500.0), (600.0, 640.0), (700.0, 500.0), (800.0, 620.0)), width=2.0)
        img = render(Sketch((far,), (32, 32)), CFG)
        assert np.all(np.abs(img - 1.0) < 1e-3)

    def test_stroke_through_pixel_center_goes_black(self):
        # Horizontal line along y = 16.5 passes through the center of row 16.
        line = Stroke(((2.0, 16.5), (30.0, 16.5)), width=2.0)
        img = render(Sketch((line,), (32, 32)), RasterConfig(softness=0.005))
        assert img[16, 16] < 1e-6

    def test_overlap_is_product_of_transmittance(self):
        line = Stroke(((2.0, 16.5), (30.0, 16.5)), width=2.0)
        single = render(Sketch((line,), (32, 32)), CFG)
        double = render(Sketch((line, line), (32, 32)), CFG)
        np.testing.assert_allclose(double, single**2, atol=1e-12)

    def test_output_in_unit_range(self, rng):
        for _ in range(10):
            img = render(random_sketch(rng, n=4), CFG)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_determinism_bit_identical(self, rng):
        sk = random_sketch(rng, n=5)
        assert np.array_equal(render(sk, CFG), render(sk, CFG))

    def test_monotone_under_added_stroke(self, rng):
        for _ in range(10):
            sk = random_sketch(rng, n=3)
            extra = random_sketch(rng, n=1).strokes
            more = Sketch(sk.strokes + extra, sk.canvas_size)
            assert np.all(render(more, CFG) <= render(sk, CFG) + 1e-15)

    def test_mirror_symmetry(self, rng):
        for _ in range(5):
            sk = random_sketch(rng, n=3)
            np.testing.assert_allclose(
                render(mirror(sk), CFG), np.fliplr(render(sk, CFG)), atol=1e-6)

    def test_degenerate_stroke_renders_dot(self):
        dot = Stroke(((16.5, 16.5),) * 4, width=3.0)
        img = render(Sketch((dot,), (32, 32)), RasterConfig(softness=0.1))
        assert img[16, 16] < 0.01
        assert img[16, 24] > 0.99

    def test_bad_softness_rejected(self):
        with pytest.raises(ValueError):
            RasterConfig(softness=0.0)


class TestRenderBackward:
    def test_zero_pixel_grad_gives_zero(self, rng):
        sk = random_sketch(rng)
        g = render_backward(sk, CFG, np.zeros((32, 32)))
        assert g.shape == (to_params(sk).size,)
        assert np.all(g == 0.0)

    def test_shape_mismatch_rejected(self, rng):
        sk = random_sketch(rng)
        with pytest.raises(ValueError):
            render_backward(sk, CFG, np.zeros((16, 16)))

    def test_far_pixel_has_no_gradient(self):
        line = Stroke(((2.0, 4.5), (30.0, 4.5)), width=1.5)
        sk = Sketch((line,), (32, 32))
        g = np.zeros((32, 32))
        g[30, 16] = 1.0  # > 10 widths away from the stroke
        assert np.max(np.abs(render_backward(sk, CFG, g))) < 1e-6

    def test_matches_finite_differences(self, rng):
        for _ in range(8):
            sk = random_sketch(rng, n=int(rng.integers(1, 5)))
            g = rng.normal(size=(32, 32))
            bad, skipped, total = check_gradients(sk, CFG, g)
            assert bad == 0, f"{bad}/{total} params outside tolerance ({skipped} tie-skipped)"

    def test_translation_directional_derivative(self, rng):
        # Translating one stroke: directional derivative = sum of its
        # per-coordinate gradients against the translation direction.
        sk = random_sketch(rng, n=1, degree=3)
        g = rng.normal(size=(32, 32))
        grad = render_backward(sk, CFG, g)
        h = 1e-3
        delta = np.tile([0.7, -0.3], 4)
        p = to_params(sk)
        from strokeopt import from_params

        lp = float((g * render(from_params(p + h * delta, sk), CFG)).sum())
        lm = float((g * render(from_params(p - h * delta, sk), CFG)).sum())
        fd = (lp - lm) / (2 * h)
        assert float(grad @ delta) == pytest.approx(fd, rel=1e-3, abs=1e-6)


class TestCompositeToRgb:
    def test_white_stays_white(self):
        rgb = composite_to_rgb(np.ones((4, 4)))
        assert rgb.shape == (4, 4, 3)
        assert np.all(rgb == 1.0)

    def test_replicates_values(self):
        img = np.full((2, 2), 0.25)
        np.testing.assert_array_equal(composite_to_rgb(img), np.full((2, 2, 3), 0.25))

    def test_channel_mean_round_trip(self, rng):
        img = rng.uniform(size=(8, 8))
        np.testing.assert_allclose(composite_to_rgb(img).mean(axis=2), img, atol=1e-15)

    def test_rejects_multichannel(self, rng):
        with pytest.raises(ValueError):
            composite_to_rgb(rng.uniform(size=(4, 4, 3)))

    def test_backward_is_channel_sum(self, rng):
        g = rng.normal(size=(4, 4, 3))
        np.testing.assert_array_equal(composite_to_rgb_backward(g), g.sum(axis=2))


@pytest.mark.skipif(cykernel is None, reason="compiled kernel not built")
class TestKernelParity:
    """The compiled kernel and the numpy fallback must agree."""

    def test_forward_parity(self, rng):
        for _ in range(10):
            sk = random_sketch(rng, n=int(rng.integers(1, 6)))
            pts, off, wid, _ = _flatten_sketch(sk, CFG)
            a = numpy_kernel.render(pts, off, wid, 32, 32, CFG.softness)
            b = cykernel.render(pts, off, wid, 32, 32, CFG.softness)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_backward_parity(self, rng):
        for _ in range(10):
            sk = random_sketch(rng, n=int(rng.integers(1, 6)))
            g = rng.normal(size=(32, 32))
            pts, off, wid, _ = _flatten_sketch(sk, CFG)
            a = numpy_kernel.render_backward(pts, off, wid, 32, 32, CFG.softness, g)
            b = cykernel.render_backward(pts, off, wid, 32, 32, CFG.softness, g)
            np.testing.assert_allclose(a, b, atol=1e-11)

    def test_saturated_coverage_backward_finite(self):
        # Width/softness chosen so coverage saturates to exactly 1.0 in
        # float64; the leave-one-out product must stay finite.
        line = Stroke(((2.0, 16.5), (30.0, 16.5)), width=4.0)
        sk = Sketch((line, line), (32, 32))
        cfg = RasterConfig(softness=0.01)
        g = np.ones((32, 32))
        out = render_backward(sk, cfg, g)
        assert np.all(np.isfinite(out))
