"""Image and SVG file handling.

Targets come in as PNG/JPEG, get resized to the working resolution and
normalized to [0, 1] floats. Results go out as an SVG whose path data maps
one-to-one onto the stroke control points (6-decimal fixed format), plus a
rasterized PNG. The SVG writer/parser pair round-trips exactly.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Sketch, Stroke

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601, matches PIL's L conversion

_PATH_COMMANDS = {3: "C", 2: "Q", 1: "L"}
_POINTS_PER_COMMAND = {"C": 3, "Q": 2, "L": 1}


def _decode_to_float(img: Image.Image) -> np.ndarray:
    """PIL image -> (H, W, 3) float64 in [0, 1]; alpha composites over white."""
    if img.mode in ("I;16", "I;16B", "I;16L"):
        gray = np.asarray(img, dtype=np.float64) / 65535.0
        return np.repeat(gray[:, :, None], 3, axis=2)
    if img.mode == "I":
        gray = np.asarray(img, dtype=np.float64) / 65535.0
        return np.repeat(np.clip(gray, 0.0, 1.0)[:, :, None], 3, axis=2)
    if img.mode in ("RGBA", "LA", "PA"):
        rgba = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
        alpha = rgba[:, :, 3:4]
        return rgba[:, :, :3] * alpha + (1.0 - alpha)
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def _resize_channels(data: np.ndarray, width: int, height: int) -> np.ndarray:
    if data.shape[:2] == (height, width):
        return data
    out = np.empty((height, width, data.shape[2]))
    for c in range(data.shape[2]):
        chan = Image.fromarray(data[:, :, c].astype(np.float32), mode="F")
        out[:, :, c] = np.asarray(chan.resize((width, height), Image.BILINEAR))
    return out


def load_target(path, resolution: int | tuple[int, int] = 224) -> np.ndarray:
    """Decode and bilinearly resize an image to (H, W, 3) floats in [0, 1]."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    with Image.open(path) as img:
        data = _decode_to_float(img)
    return np.clip(_resize_channels(data, *resolution), 0.0, 1.0)


def load_mask(path, resolution: int | tuple[int, int] = 224) -> np.ndarray:
    """Grayscale keep-mask in [0, 1] (white = keep), resized like the target."""
    return to_luminance(load_target(path, resolution))


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Blend the background to white: image * mask + (1 - mask)."""
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image {image.shape[:2]}")
    m = mask[:, :, None]
    return image * m + (1.0 - m)


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) -> (H, W) luminance."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got shape {rgb.shape}")
    return rgb @ np.asarray(LUMA_WEIGHTS)


def save_png(image: np.ndarray, path):
    """Write a float image in [0, 1] (grayscale or RGB) as 8-bit PNG."""
    data = np.clip(np.asarray(image), 0.0, 1.0)
    bytes_ = np.round(data * 255.0).astype(np.uint8)
    Image.fromarray(bytes_, mode="L" if data.ndim == 2 else "RGB").save(path, format="PNG")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _path_d(stroke: Stroke) -> str:
    cmd = _PATH_COMMANDS[stroke.degree]
    coords = " ".join(_fmt(c) for p in stroke.points[1:] for c in p)
    return f"M {_fmt(stroke.points[0][0])} {_fmt(stroke.points[0][1])} {cmd} {coords}"


def export_svg(sketch: Sketch, path):
    """One black, round-capped path element per stroke; viewBox = canvas."""
    w, h = sketch.canvas_size
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
    ]
    for stroke in sketch.strokes:
        lines.append(
            f'  <path d="{_path_d(stroke)}" fill="none" stroke="black" '
            f'stroke-width="{_fmt(stroke.width)}" stroke-linecap="round"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_svg(path) -> Sketch:
    """Read back a sketch written by export_svg (exact control points)."""
    root = ET.parse(path).getroot()
    viewbox = root.get("viewBox")
    if viewbox is None:
        raise ValueError("missing viewBox")
    _, _, w, h = (float(v) for v in viewbox.split())
    strokes = []
    for el in root.iter("{http://www.w3.org/2000/svg}path"):
        tokens = el.get("d", "").split()
        if len(tokens) < 3 or tokens[0] != "M":
            raise ValueError(f"unsupported path data: {el.get('d')!r}")
        cmd = tokens[3]
        expect = _POINTS_PER_COMMAND.get(cmd)
        if expect is None or len(tokens) != 4 + 2 * expect:
            raise ValueError(f"unsupported path data: {el.get('d')!r}")
        values = [float(t) for t in tokens[1:3]] + [float(t) for t in tokens[4:]]
        points = tuple(zip(values[0::2], values[1::2]))
        strokes.append(Stroke(points, width=float(el.get("stroke-width", "1"))))
    return Sketch(tuple(strokes), (int(w), int(h)))


def write_loss_csv(rows, path):
    """rows: iterable of (iter, total, semantic, geometric)."""
    lines = ["iter,eval_loss,semantic,geometric"]
    for it, total, semantic, geometric in rows:
        lines.append(f"{it},{total:.10g},{semantic:.10g},{geometric:.10g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
