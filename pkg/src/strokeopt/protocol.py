"""Binary wire protocol between the optimizer and the loss sidecar.

This module is the authoritative definition of the format; the sidecar
implements the same layout independently. All integers and floats are
little-endian. A frame is:

    magic "SKOP" | version u16 (= 1) | msg_type u16 | payload_len u32 | payload

Messages (client -> service):
    1 REGISTER_TARGET  payload: w u32, h u32, c u32, pixels f32[w*h*c]
    2 EVAL_LOSS        payload: target_id u32, augment_views u32, seed u64,
                       flags u32, w u32, h u32, c u32, pixels f32[w*h*c]
    3 SHUTDOWN         payload: empty

Replies (service -> client):
    101 TARGET_READY   payload: target_id u32, relevancy f32[w*h]
    102 LOSS_REPORT    payload: total f64, semantic f64, geometric f64,
                       grad f32[w*h*c]
    103 SHUTDOWN_OK    payload: empty
    500 ERROR          payload: UTF-8 message

Pixel and gradient buffers are row-major with interleaved channels, i.e.
C-order (h, w, c). EVAL_LOSS flags: bit0 include the semantic term, bit1
include the geometric term, bit2 l2-parity mode (bypass the models and
return a plain MSE, used for cross-implementation testing).
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


class ProtocolError(Exception):
    """The peer sent something malformed, or reported an error frame."""


class TransportError(Exception):
    """The underlying stream died (EOF, broken pipe, connection reset)."""


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def decode_frame_header(header: bytes) -> tuple[int, int]:
    """Returns (msg_type, payload_len); raises ProtocolError on a bad header."""
    if len(header) != _HEADER.size:
        raise ProtocolError(f"short frame header ({len(header)} bytes)")
    magic, version, msg_type, payload_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    return msg_type, payload_len


def read_exact(stream, n: int) -> bytes:
    """Read exactly n bytes; TransportError on EOF."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise TransportError(f"stream closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> tuple[int, bytes]:
    msg_type, payload_len = decode_frame_header(read_exact(stream, _HEADER.size))
    return msg_type, read_exact(stream, payload_len)


def _image_bytes(image: np.ndarray) -> tuple[int, int, int, bytes]:
    image = np.asarray(image)
    if image.ndim == 2:
        h, w = image.shape
        c = 1
    elif image.ndim == 3:
        h, w, c = image.shape
    else:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {image.shape}")
    return w, h, c, np.ascontiguousarray(image, dtype="<f4").tobytes()


def encode_register_target(image: np.ndarray) -> bytes:
    w, h, c, pixels = _image_bytes(image)
    return encode_frame(MSG_REGISTER_TARGET, struct.pack("<III", w, h, c) + pixels)


def decode_target_ready(payload: bytes, w: int, h: int) -> tuple[int, np.ndarray]:
    """Returns (target_id, relevancy (h, w) float)."""
    expect = 4 + 4 * w * h
    if len(payload) != expect:
        raise ProtocolError(f"TARGET_READY payload is {len(payload)} bytes, expected {expect}")
    (target_id,) = struct.unpack_from("<I", payload, 0)
    relevancy = np.frombuffer(payload, dtype="<f4", count=w * h, offset=4)
    relevancy = relevancy.reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(relevancy)) or np.any(relevancy < 0):
        raise ProtocolError("relevancy map must be finite and non-negative")
    return target_id, relevancy


def encode_eval_loss(target_id: int, augment_views: int, seed: int, flags: int,
                     image: np.ndarray) -> bytes:
    w, h, c, pixels = _image_bytes(image)
    head = struct.pack("<IIQI", target_id, augment_views, seed, flags)
    return encode_frame(MSG_EVAL_LOSS, head + struct.pack("<III", w, h, c) + pixels)


def decode_loss_report(payload: bytes, shape: tuple[int, ...]) -> tuple[float, float, float, np.ndarray]:
    """Returns (total, semantic, geometric, grad) with grad shaped like the image."""
    count = int(np.prod(shape))
    expect = 24 + 4 * count
    if len(payload) != expect:
        raise ProtocolError(f"LOSS_REPORT payload is {len(payload)} bytes, expected {expect}")
    total, semantic, geometric = struct.unpack_from("<ddd", payload, 0)
    grad = np.frombuffer(payload, dtype="<f4", offset=24).reshape(shape).astype(np.float64)
    if not all(map(np.isfinite, (total, semantic, geometric))) or not np.all(np.isfinite(grad)):
        raise ProtocolError("loss report contains non-finite values")
    return total, semantic, geometric, grad


def encode_shutdown() -> bytes:
    return encode_frame(MSG_SHUTDOWN)


def decode_error(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")
