"""Client side of the sidecar loss service.

A session owns one stream (a spawned process's stdio or a TCP socket) and
keeps exactly one request in flight. Parallel seeds each open their own
session.
"""

from __future__ import annotations

import shlex
import socket
import subprocess

import numpy as np

from . import protocol
from .loss import LossReport, LossSpec
from .protocol import ProtocolError, TransportError


class RemoteSession:
    """Blocking request/response channel to a loss sidecar."""

    def __init__(self, reader, writer, process=None, sock=None):
        self._reader = reader
        self._writer = writer
        self._process = process
        self._sock = sock
        self._closed = False

    @classmethod
    def spawn(cls, command: str) -> "RemoteSession":
        """Start the sidecar as a child process speaking on stdio."""
        proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE,
                                stdout=subprocess.PIPE)
        return cls(proc.stdout, proc.stdin, process=proc)

    @classmethod
    def connect(cls, host: str, port: int) -> "RemoteSession":
        sock = socket.create_connection((host, port))
        f = sock.makefile("rwb")
        return cls(f, f, sock=sock)

    @classmethod
    def open(cls, endpoint: str) -> "RemoteSession":
        """Parse "cmd:<command line>" or "tcp:<host>:<port>"."""
        kind, _, rest = endpoint.partition(":")
        if kind == "cmd" and rest:
            return cls.spawn(rest)
        if kind == "tcp" and rest:
            host, _, port = rest.rpartition(":")
            if host and port.isdigit():
                return cls.connect(host, int(port))
        raise ValueError(f"endpoint must be cmd:<command> or tcp:<host>:<port>, got {endpoint!r}")

    def _request(self, frame: bytes) -> tuple[int, bytes]:
        if self._closed:
            raise TransportError("session is closed")
        try:
            self._writer.write(frame)
            self._writer.flush()
            msg_type, payload = protocol.read_frame(self._reader)
        except (BrokenPipeError, ConnectionError, OSError) as exc:
            self.close()
            raise TransportError(f"sidecar connection lost: {exc}") from exc
        if msg_type == protocol.MSG_ERROR:
            raise ProtocolError(f"sidecar error: {protocol.decode_error(payload)}")
        return msg_type, payload

    def register_target(self, image: np.ndarray) -> tuple[int, np.ndarray]:
        """Send the target; returns (target_id, relevancy map (H, W))."""
        h, w = image.shape[:2]
        msg_type, payload = self._request(protocol.encode_register_target(image))
        if msg_type != protocol.MSG_TARGET_READY:
            raise ProtocolError(f"expected TARGET_READY, got msg {msg_type}")
        return protocol.decode_target_ready(payload, w, h)

    def eval_loss(self, target_id: int, image: np.ndarray, *, augment_views: int,
                  seed: int, flags: int) -> tuple[float, float, float, np.ndarray]:
        msg_type, payload = self._request(
            protocol.encode_eval_loss(target_id, augment_views, seed, flags, image))
        if msg_type != protocol.MSG_LOSS_REPORT:
            raise ProtocolError(f"expected LOSS_REPORT, got msg {msg_type}")
        return protocol.decode_loss_report(payload, np.asarray(image).shape)

    def shutdown(self):
        """Polite stop: SHUTDOWN round trip, then close the stream."""
        if self._closed:
            return
        try:
            msg_type, _ = self._request(protocol.encode_shutdown())
            if msg_type != protocol.MSG_SHUTDOWN_OK:
                raise ProtocolError(f"expected SHUTDOWN_OK, got msg {msg_type}")
        finally:
            self.close()

    def close(self):
        if self._closed:
            return
        self._closed = True
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._process is not None:
            try:
                self._process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._process.kill()
                self._process.wait()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        # Attempt the polite SHUTDOWN round trip even when unwinding from a
        # failure; fall back to a hard close if the channel is wrecked.
        try:
            self.shutdown()
        except (ProtocolError, TransportError):
            self.close()
        return False


class RemoteBackend:
    """Loss backend that proxies evaluation to a sidecar session.

    The sidecar owns augmentation and the model forward/backward; the
    returned gradient is with respect to the unaugmented sketch image. The
    sidecar must be configured with the same semantic weight as `spec`:
    the total it reports is checked against geometric + w_s * semantic.
    """

    def __init__(self, session: RemoteSession, target_id: int, spec: LossSpec,
                 parity: bool = False):
        self.session = session
        self.target_id = target_id
        self.spec = spec
        self.flags = (protocol.FLAG_L2_PARITY if parity
                      else protocol.FLAG_SEMANTIC | protocol.FLAG_GEOMETRIC)

    def evaluate(self, image: np.ndarray, *, augment_views: int = 0, seed: int = 0) -> LossReport:
        total, semantic, geometric, grad = self.session.eval_loss(
            self.target_id, image, augment_views=augment_views, seed=seed, flags=self.flags)
        if not self.flags & protocol.FLAG_L2_PARITY:
            expect = geometric + self.spec.semantic_weight * semantic
            if abs(total - expect) > 1e-6:
                raise ProtocolError(
                    f"sidecar total {total} != geometric + {self.spec.semantic_weight} * semantic"
                    f" = {expect}; check the sidecar's --ws setting")
        return LossReport(total, semantic, geometric, grad)

    def close(self):
        self.session.shutdown()
