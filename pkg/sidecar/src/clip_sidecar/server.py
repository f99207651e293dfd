"""Entry point: serves the loss protocol on stdio or a TCP socket.

One request in flight at a time, matching the client contract. Logs go to
stderr; in stdio mode sys.stdout is rebound to stderr so stray prints from
libraries can never corrupt the protocol stream.
"""

from __future__ import annotations

import argparse
import logging
import os
import socket
import sys

from . import wire
from .models import load_tower
from .service import AugmentConfig, LossService

log = logging.getLogger("sidecar")


def serve_stream(service: LossService, reader, writer) -> bool:
    """Pump frames until SHUTDOWN (returns True) or EOF (returns False)."""
    while True:
        try:
            frame = wire.read_frame(reader)
        except wire.WireError as exc:
            log.warning("unreadable frame: %s", exc)
            writer.write(wire.error_frame(str(exc)))
            writer.flush()
            continue
        except wire.StreamClosed:
            log.info("peer closed the stream mid-frame")
            return False
        if frame is None:
            log.info("peer closed the stream")
            return False
        reply, keep_serving = service.handle_frame(*frame)
        writer.write(reply)
        writer.flush()
        if not keep_serving:
            return True


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        layers = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}") from exc
    if not layers or any(layer < 1 for layer in layers):
        raise argparse.ArgumentTypeError("layers must be positive integers")
    return layers


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sidecar",
        description="Loss service: semantic/geometric CLIP losses over a binary protocol.")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="serve on stdin/stdout")
    mode.add_argument("--listen", metavar="HOST:PORT", help="serve one TCP session")
    p.add_argument("--ws", type=float, default=0.1,
                   help="semantic weight in the combined loss (must match the client)")
    p.add_argument("--layers", type=_parse_layers, default=(3, 4),
                   help="encoder layers for the geometric loss, e.g. 3,4")
    p.add_argument("--models", choices=("auto", "cache", "random"), default="auto",
                   help="weight source; cache reads the CLIP_SIDECAR_CACHE directory")
    p.add_argument("--perspective", type=float, default=0.5,
                   help="augmentation perspective distortion")
    p.add_argument("--crop-scale", type=float, nargs=2, default=(0.8, 1.0),
                   metavar=("LO", "HI"), help="augmentation crop area range")
    return p


def main(argv=None) -> int:
    level = os.environ.get("SIDECAR_LOG", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "INFO"
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    tower = load_tower(args.models)
    augment = AugmentConfig(perspective_distortion=args.perspective,
                            crop_scale=tuple(args.crop_scale))
    service = LossService(tower, ws=args.ws, layers=args.layers, augment=augment)
    log.info("serving with weights=%s, layers=%s, ws=%g",
             tower.source, args.layers, args.ws)

    if args.stdio:
        stdout = sys.stdout.buffer
        sys.stdout = sys.stderr  # nothing but frames may reach the real stdout
        serve_stream(service, sys.stdin.buffer, stdout)
        return 0

    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        build_parser().error(f"--listen expects HOST:PORT, got {args.listen!r}")
    with socket.create_server((host, int(port))) as server:
        log.info("listening on %s:%s", host, port)
        while True:
            conn, peer = server.accept()
            log.info("client %s connected", peer)
            with conn, conn.makefile("rwb") as stream:
                if serve_stream(service, stream, stream):
                    return 0  # clean SHUTDOWN ends the service


if __name__ == "__main__":
    sys.exit(main())
