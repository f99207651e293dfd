"""Stroke initialization: edge-aware saliency sampling.

The initial stroke positions are drawn from a probability map built by
multiplying a relevancy map (model attention, or a user-supplied grayscale
image, or uniform) with an XDoG edge map, then softmax-normalizing. Each
stroke's first control point is drawn from that map; the remaining points
land uniformly in a small disk around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .geometry import Sketch, Stroke

DEFAULT_INIT_RADIUS = 0.05


@dataclass(frozen=True)
class XdogParams:
    """Difference-of-Gaussians edge extraction with a soft tanh threshold.

    The response D = blur(sigma) - tau * blur(k * sigma) is mapped to
    1 where D >= epsilon and 1 + tanh(phi * (D - epsilon)) elsewhere, then
    inverted so edges score high. With tau = 1 the response is a pure DoG,
    which makes the operator exactly invariant to constant luminance
    shifts; epsilon sits slightly below zero so flat regions (D = 0) fall
    on the no-edge side of the threshold.
    """

    sigma: float = 0.8
    k: float = 1.6
    tau: float = 1.0
    epsilon: float = -0.01
    phi: float = 200.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.k <= 1:
            raise ValueError("k must be > 1")


@dataclass(frozen=True)
class DistributionMap:
    """Normalized probability field over canvas pixels."""

    probs: np.ndarray  # (H, W), sums to 1

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError(f"probability map must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {probs.sum()}, expected 1")

    @property
    def canvas_size(self) -> tuple[int, int]:
        h, w = self.probs.shape
        return w, h


def xdog(image: np.ndarray, params: XdogParams = XdogParams()) -> np.ndarray:
    """Edge-strength map in [0, 1] (high = edge) from a grayscale image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"xdog expects a grayscale (H, W) image, got shape {image.shape}")
    response = (gaussian_filter(image, params.sigma)
                - params.tau * gaussian_filter(image, params.k * params.sigma))
    soft = 1.0 + np.tanh(params.phi * (response - params.epsilon))
    stylized = np.where(response >= params.epsilon, 1.0, soft)
    return 1.0 - stylized


def resample_bilinear(field: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of a 2-D float field to (height, width)."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape == (height, width):
        return field
    img = Image.fromarray(field.astype(np.float32), mode="F")
    return np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64)


def build_distribution(relevancy: np.ndarray, edges: np.ndarray,
                       temperature: float = 1.0) -> DistributionMap:
    """softmax(relevancy * edges / temperature) over all pixels.

    The relevancy map is bilinearly upsampled to the edge resolution first.
    A softmax of an all-zero product is exactly uniform, which doubles as
    the fallback when neither map has signal.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 2:
        raise ValueError(f"edge map must be 2-D, got shape {edges.shape}")
    relevancy = np.asarray(relevancy, dtype=np.float64)
    if np.any(relevancy < 0) or not np.all(np.isfinite(relevancy)):
        raise ValueError("relevancy must be finite and non-negative")
    h, w = edges.shape
    product = resample_bilinear(relevancy, w, h) * edges
    logits = product.ravel() / temperature
    logits -= logits.max()
    weights = np.exp(logits)
    return DistributionMap((weights / weights.sum()).reshape(h, w))


def uniform_relevancy(width: int, height: int) -> np.ndarray:
    """Flat relevancy for edges-only initialization."""
    return np.ones((height, width), dtype=np.float64)


def load_relevancy(source) -> np.ndarray:
    """Relevancy map from a grayscale image file, or validate an array.

    Files are read as luminance scaled to [0, 1] (8- or 16-bit). Arrays
    (e.g. the map a sidecar returns at target registration) are validated
    and passed through.
    """
    if isinstance(source, np.ndarray):
        values = np.asarray(source, dtype=np.float64)
    else:
        with Image.open(source) as img:
            if img.mode == "I;16":
                values = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                values = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if values.ndim != 2:
        raise ValueError(f"relevancy must be 2-D, got shape {values.shape}")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("relevancy must be finite and non-negative")
    return values


def sample_initial_sketch(dist: DistributionMap, n: int, degree: int = 3,
                          radius: float = DEFAULT_INIT_RADIUS, rng_seed: int = 0,
                          width: float = 1.5) -> Sketch:
    """Draw n strokes: first control point from the distribution map, the
    rest uniform in a disk of radius * min(canvas) around it."""
    if n < 1:
        raise ValueError("need at least one stroke")
    if not 0 < radius < 1:
        raise ValueError(f"radius must be a canvas fraction in (0, 1), got {radius}")
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")
    canvas_w, canvas_h = dist.canvas_size
    rng = np.random.default_rng(rng_seed)
    p = dist.probs.ravel()
    p = p / p.sum()  # repair float drift so the sampler sees an exact simplex
    disk = radius * min(canvas_w, canvas_h)

    strokes = []
    cells = rng.choice(p.size, size=n, p=p)
    for cell in cells:
        row, col = divmod(int(cell), canvas_w)
        first = (col + rng.uniform(), row + rng.uniform())
        pts = [first]
        for _ in range(degree):
            r = disk * np.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2.0 * np.pi)
            pts.append((first[0] + r * np.cos(theta), first[1] + r * np.sin(theta)))
        strokes.append(Stroke(tuple(pts), width=width))
    return Sketch(tuple(strokes), (canvas_w, canvas_h), uniform_width=True)
