"""Command-line pipeline: target image in, vector sketch out.

For each requested stroke budget the tool builds the initialization
distribution (relevancy x edges), optimizes over several seeds, and writes
four artifacts: sketch.svg, sketch.png, losses.csv and manifest.json.
Native losses (l2, blur) run fully in-process; --loss clip talks to a
sidecar over the wire protocol and shuts it down on exit.

Log level comes from the STROKEOPT_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .loss import LossSpec
from .optimize import OptConfig, run_multi_seed
from .raster import RasterConfig, render
from .remote import RemoteBackend, RemoteSession
from .saliency import build_distribution, load_relevancy, uniform_relevancy, xdog

log = logging.getLogger("strokeopt")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive count, got {text}")
    return value


def _stroke_levels(text: str) -> list[int]:
    try:
        levels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad stroke count list {text!r}") from exc
    if not levels or any(n < 1 for n in levels):
        raise argparse.ArgumentTypeError("stroke counts must be >= 1")
    return levels


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="strokeopt",
        description="Fit a budget of Bezier strokes to an image by gradient descent.")
    p.add_argument("--input", required=True, help="target image (PNG/JPEG)")
    p.add_argument("--mask", help="optional keep-mask image (white = keep)")
    p.add_argument("--strokes", type=_stroke_levels, default=[16],
                   help="stroke count, or comma list for an abstraction sweep (e.g. 32,16,8,4)")
    p.add_argument("--control-points", type=int, choices=(2, 3, 4), default=4,
                   help="control points per stroke (degree + 1)")
    p.add_argument("--width", type=float, default=1.5, help="stroke width in pixels")
    p.add_argument("--resolution", type=_positive_int, default=224, help="canvas size in pixels")
    p.add_argument("--loss", choices=("l2", "blur", "clip"), default="l2")
    p.add_argument("--ws", type=float, default=0.1, help="semantic loss weight")
    p.add_argument("--augment-views", type=int, default=4,
                   help="augmented pairs per loss evaluation (sidecar only)")
    p.add_argument("--backend", help="sidecar endpoint: cmd:<command> or tcp:<host>:<port>")
    p.add_argument("--relevancy", default="auto",
                   help="initialization relevancy: auto, none, or file:<path>")
    p.add_argument("--seeds", type=_positive_int, default=3)
    p.add_argument("--iters", type=_positive_int, default=2000)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--eval-every", type=_positive_int, default=10)
    p.add_argument("--converge-delta", type=float, default=1e-5)
    p.add_argument("--snapshot-every", type=_positive_int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--softness", type=float, default=0.7,
                   help="rasterizer edge softness in pixels")
    return p


def _resolve_relevancy(choice: str, session_map, canvas: int) -> np.ndarray:
    if choice == "none":
        return uniform_relevancy(canvas, canvas)
    if choice.startswith("file:"):
        return load_relevancy(choice[len("file:"):])
    if choice == "auto":
        if session_map is not None:
            return load_relevancy(session_map)
        log.info("no sidecar relevancy available; falling back to edges-only initialization")
        return uniform_relevancy(canvas, canvas)
    raise ValueError(f"--relevancy must be auto, none or file:<path>, got {choice!r}")


def _manifest(args, n: int, seeds: list[int], outputs: dict[str, str]) -> dict:
    return {
        "tool": "strokeopt",
        "version": __version__,
        "input": str(args.input),
        "mask": str(args.mask) if args.mask else None,
        "mask_applied": args.mask is not None,
        "strokes": n,
        "control_points": args.control_points,
        "stroke_width": args.width,
        "resolution": args.resolution,
        "softness": args.softness,
        "loss": {
            "backend": args.loss,
            "semantic_weight": args.ws,
            "augment_views": args.augment_views,
            "endpoint": args.backend,
        },
        "relevancy": args.relevancy,
        "optimizer": {
            "lr": args.lr,
            "max_iters": args.iters,
            "eval_every": args.eval_every,
            "converge_delta": args.converge_delta,
            "snapshot_every": args.snapshot_every,
        },
        "rng_seeds": seeds,
        "outputs": outputs,
    }


def _write_outputs(args, result, n: int, out_dir: Path, raster_config: RasterConfig):
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_path = out_dir / "sketch.svg"
    png_path = out_dir / "sketch.png"
    csv_path = out_dir / "losses.csv"
    manifest_path = out_dir / "manifest.json"

    fileio.export_svg(result.final_sketch, svg_path)
    fileio.save_png(render(result.final_sketch, raster_config), png_path)
    fileio.write_loss_csv(
        [(it, r.total, r.semantic, r.geometric) for it, r in result.reports], csv_path)
    if result.snapshots:
        snap_dir = out_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for it, sketch in result.snapshots:
            fileio.export_svg(sketch, snap_dir / f"iter_{it:06d}.svg")

    outputs = {
        "svg": svg_path.name,
        "png": png_path.name,
        "losses": csv_path.name,
        "manifest": manifest_path.name,
    }
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    manifest_path.write_text(
        json.dumps(_manifest(args, n, seeds, outputs), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def run_pipeline(args) -> None:
    resolution = args.resolution
    target = fileio.load_target(args.input, resolution)
    if args.mask:
        target = fileio.apply_mask(target, fileio.load_mask(args.mask, resolution))
    gray = fileio.to_luminance(target)
    edges = xdog(gray)

    raster_config = RasterConfig(resolution=resolution, softness=args.softness)
    opt_config = OptConfig(
        lr=args.lr, max_iters=args.iters, eval_every=args.eval_every,
        converge_delta=args.converge_delta, seeds=args.seeds,
        snapshot_every=args.snapshot_every, stroke_width=args.width)
    degree = args.control_points - 1

    session = None
    try:
        relevancy_from_sidecar = None
        if args.loss == "clip":
            session = RemoteSession.open(args.backend)
            target_id, relevancy_from_sidecar = session.register_target(target)
            spec = LossSpec(backend="remote", semantic_weight=args.ws,
                            augment_views=args.augment_views, endpoint=args.backend)
            loss = RemoteBackend(session, target_id, spec)
        else:
            loss = LossSpec(backend=args.loss, semantic_weight=args.ws,
                            augment_views=args.augment_views)

        relevancy = _resolve_relevancy(args.relevancy, relevancy_from_sidecar, resolution)
        dist = build_distribution(relevancy, edges)

        out_root = Path(args.out)
        multi_level = len(args.strokes) > 1
        for n in args.strokes:
            log.info("optimizing %d strokes (%d seeds, %d iters max)", n, args.seeds, args.iters)
            best, _ = run_multi_seed(target, loss, dist, n, degree, opt_config,
                                     raster_config, seed_base=args.seed_base)
            level_dir = out_root / f"strokes_{n}" if multi_level else out_root
            _write_outputs(args, best, n, level_dir, raster_config)
            log.info("strokes=%d: best seed %d, eval loss %.6g -> %s",
                     n, best.seed, best.final_eval_loss, level_dir)
    finally:
        if session is not None:
            try:
                session.shutdown()
            except Exception as exc:  # the sidecar may already be gone
                log.warning("sidecar shutdown failed: %s", exc)
                session.close()


def main(argv=None) -> int:
    level = os.environ.get("STROKEOPT_LOG", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "INFO"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.loss == "clip" and not args.backend:
        parser.error("--loss clip requires --backend")
    try:
        run_pipeline(args)
    except Exception as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
