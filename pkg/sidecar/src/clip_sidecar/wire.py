"""Server-side codec for the optimizer's loss protocol.

Little-endian frames: magic "SKOP" | version u16 (=1) | msg_type u16 |
payload_len u32 | payload. Implemented independently of the client
package; the shared golden byte fixtures keep the two in lockstep.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SKOP"
VERSION = 1

MSG_REGISTER_TARGET = 1
MSG_EVAL_LOSS = 2
MSG_SHUTDOWN = 3
MSG_TARGET_READY = 101
MSG_LOSS_REPORT = 102
MSG_SHUTDOWN_OK = 103
MSG_ERROR = 500

FLAG_SEMANTIC = 1
FLAG_GEOMETRIC = 2
FLAG_L2_PARITY = 4

_HEADER = struct.Struct("<4sHHI")
_MAX_PAYLOAD = 256 * 1024 * 1024  # refuse absurd frames instead of allocating


class WireError(Exception):
    """Malformed frame or payload; answered with an ERROR frame."""


class StreamClosed(Exception):
    """Peer went away mid-frame."""


def read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise StreamClosed(f"{remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> tuple[int, bytes] | None:
    """Next (msg_type, payload), or None on a clean EOF between frames."""
    first = stream.read(1)
    if not first:
        return None
    header = first + read_exact(stream, _HEADER.size - 1)
    magic, version, msg_type, payload_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireError(f"unsupported protocol version {version}")
    if payload_len > _MAX_PAYLOAD:
        raise WireError(f"payload of {payload_len} bytes exceeds the frame limit")
    return msg_type, read_exact(stream, payload_len)


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def error_frame(message: str) -> bytes:
    return encode_frame(MSG_ERROR, message.encode("utf-8"))


def _parse_image(payload: bytes, offset: int) -> np.ndarray:
    if len(payload) < offset + 12:
        raise WireError("image header truncated")
    w, h, c = struct.unpack_from("<III", payload, offset)
    if w < 1 or h < 1 or c not in (1, 3):
        raise WireError(f"bad image dimensions {w}x{h}x{c}")
    count = w * h * c
    if len(payload) != offset + 12 + 4 * count:
        raise WireError(f"image payload is {len(payload) - offset - 12} bytes, "
                        f"expected {4 * count}")
    pixels = np.frombuffer(payload, dtype="<f4", count=count, offset=offset + 12)
    if not np.all(np.isfinite(pixels)):
        raise WireError("image contains non-finite pixels")
    return pixels.reshape(h, w, c).astype(np.float32)


def parse_register_target(payload: bytes) -> np.ndarray:
    return _parse_image(payload, 0)


def parse_eval_loss(payload: bytes) -> tuple[int, int, int, int, np.ndarray]:
    """Returns (target_id, augment_views, seed, flags, image)."""
    if len(payload) < 20:
        raise WireError("EVAL_LOSS payload truncated")
    target_id, views, seed, flags = struct.unpack_from("<IIQI", payload, 0)
    return target_id, views, seed, flags, _parse_image(payload, 20)


def encode_target_ready(target_id: int, relevancy: np.ndarray) -> bytes:
    body = struct.pack("<I", target_id) + np.ascontiguousarray(relevancy, dtype="<f4").tobytes()
    return encode_frame(MSG_TARGET_READY, body)


def encode_loss_report(total: float, semantic: float, geometric: float,
                       grad: np.ndarray) -> bytes:
    body = (struct.pack("<ddd", total, semantic, geometric)
            + np.ascontiguousarray(grad, dtype="<f4").tobytes())
    return encode_frame(MSG_LOSS_REPORT, body)
