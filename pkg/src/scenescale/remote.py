"""Client for the external-process backend wire protocol.

Transport: length-delimited frames over TCP. Each frame is a big-endian
uint32 body length, a single-line JSON header (newline-terminated, at
most 64 KiB), then zero or more raw tensor payloads. Tensors are always
row-major little-endian float32; the header's shape fields declare the
payload lengths ([h, w, c], 4 bytes per element).

Header fields: op, id, shape, dtype ("f32le"), and per-op extras
(timestep t, next timestep t_next, text, aux_shape for a second tensor
such as the pose map or an inpaint mask).

Handshake: on connect the server sends
{op: "hello", protocol, view_h, view_w, channels, factor, concurrent,
deterministic, model}; the client answers with its own hello and the
server acks with {op: "ready"} or an error frame. A protocol-version
mismatch is rejected deterministically by either side.

Ops: step, encode, decode, inpaint, ping. Errors come back as
{op: "error", id, message} and keep the connection alive.
"""

from __future__ import annotations

import json
import socket
import struct

import numpy as np

from .core import ImageBuffer, LatentTensor
from .errors import BackendError
from .image_ops import to_u8
from .view_scheduler import ViewRect

__all__ = ["PROTOCOL_VERSION", "MAX_HEADER_BYTES", "RemoteBackend", "encode_frame", "read_frame"]

PROTOCOL_VERSION = 1
MAX_HEADER_BYTES = 64 * 1024


def encode_frame(header: dict, payloads: tuple[bytes, ...] = ()) -> bytes:
    line = (json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8")
    if len(line) > MAX_HEADER_BYTES:
        raise BackendError(f"frame header exceeds {MAX_HEADER_BYTES} bytes")
    body = line + b"".join(payloads)
    return struct.pack(">I", len(body)) + body


def read_frame(read_exact) -> tuple[dict, bytes]:
    """Read one frame via read_exact(n) -> bytes; returns (header, payload)."""
    (length,) = struct.unpack(">I", read_exact(4))
    body = read_exact(length)
    nl = body.find(b"\n", 0, MAX_HEADER_BYTES + 1)
    if nl < 0:
        raise BackendError("frame header missing newline within the 64 KiB limit")
    try:
        header = json.loads(body[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BackendError(f"malformed frame header: {exc}") from exc
    return header, body[nl + 1 :]


def _tensor_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _tensor_from(payload: bytes, shape) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise BackendError(f"payload length {len(payload)} does not match shape {shape} ({expected} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


class RemoteBackend:
    """Denoiser + codec + inpainter facade over one protocol connection.

    Satisfies the DenoiserBackend and LatentCodec duck-type contracts, so
    a BackendBundle can point all three roles at one adapter process.
    """

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BackendError(f"cannot reach remote backend at {host}:{port}: {exc}") from exc
        self._file = self._sock.makefile("rb")
        self._next_id = 0
        hello, _ = read_frame(self._read_exact)
        if hello.get("op") == "error":
            raise BackendError(f"remote backend rejected connection: {hello.get('message')}")
        if hello.get("op") != "hello":
            raise BackendError(f"expected hello frame, got {hello.get('op')!r}")
        if hello.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise BackendError(
                f"protocol version mismatch: server {hello.get('protocol')}, client {PROTOCOL_VERSION}"
            )
        self.view_h = int(hello["view_h"])
        self.view_w = int(hello["view_w"])
        self.channels = int(hello["channels"])
        self.factor = int(hello.get("factor", 8))
        self.concurrent = bool(hello.get("concurrent", False))
        self.deterministic = bool(hello.get("deterministic", False))
        self.model = str(hello.get("model", "unknown"))
        self._send({"op": "hello", "protocol": PROTOCOL_VERSION})
        ready, _ = read_frame(self._read_exact)
        if ready.get("op") != "ready":
            raise BackendError(f"handshake failed: {ready.get('message', ready)}")

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self._file.read(n - len(buf))
            if not chunk:
                raise BackendError("remote backend closed the connection mid-frame")
            buf += chunk
        return buf

    def _send(self, header: dict, payloads: tuple[bytes, ...] = ()) -> None:
        self._sock.sendall(encode_frame(header, payloads))

    def _request(self, header: dict, payloads: tuple[bytes, ...] = ()) -> tuple[dict, bytes]:
        rid = self._next_id
        self._next_id += 1
        header = dict(header, id=rid)
        self._send(header, payloads)
        resp, payload = read_frame(self._read_exact)
        if resp.get("op") == "error":
            raise BackendError(f"remote backend error (op {header['op']}): {resp.get('message')}")
        if resp.get("id") != rid:
            raise BackendError(f"response id {resp.get('id')} does not match request {rid}")
        return resp, payload

    def ping(self) -> str:
        resp, _ = self._request({"op": "ping"})
        if resp.get("op") != "pong":
            raise BackendError(f"unexpected ping response {resp}")
        return str(resp.get("version", ""))

    def step(self, x: np.ndarray, pose: ImageBuffer, text: str, t: int, t_next: int, view: ViewRect) -> np.ndarray:
        pose_f = pose.to_float().astype(np.float32)
        resp, payload = self._request(
            {
                "op": "step",
                "t": int(t),
                "t_next": int(t_next),
                "shape": list(x.shape),
                "dtype": "f32le",
                "text": text,
                "aux_shape": list(pose_f.shape),
            },
            (_tensor_bytes(x), _tensor_bytes(pose_f)),
        )
        return _tensor_from(payload, resp["shape"])

    def encode(self, img: ImageBuffer) -> LatentTensor:
        arr = img.to_float().astype(np.float32)
        resp, payload = self._request(
            {"op": "encode", "shape": list(arr.shape), "dtype": "f32le"}, (_tensor_bytes(arr),)
        )
        return LatentTensor(_tensor_from(payload, resp["shape"]), copy=False)

    def decode(self, z: LatentTensor) -> ImageBuffer:
        resp, payload = self._request(
            {"op": "decode", "shape": list(z.data.shape), "dtype": "f32le"}, (_tensor_bytes(z.data),)
        )
        return ImageBuffer(to_u8(_tensor_from(payload, resp["shape"]).astype(np.float64)), copy=False)

    def inpaint(self, img: ImageBuffer, hole_mask: np.ndarray) -> ImageBuffer:
        arr = img.to_float().astype(np.float32)
        hole = np.asarray(hole_mask, dtype=np.float32)[:, :, np.newaxis]
        resp, payload = self._request(
            {
                "op": "inpaint",
                "shape": list(arr.shape),
                "dtype": "f32le",
                "aux_shape": list(hole.shape),
            },
            (_tensor_bytes(arr), _tensor_bytes(hole)),
        )
        return ImageBuffer(to_u8(_tensor_from(payload, resp["shape"]).astype(np.float64)), copy=False)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
