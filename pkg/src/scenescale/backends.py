"""Pluggable model boundary: denoiser and latent-codec contracts plus
deterministic toy implementations that stand in for the real networks.

The toy denoiser drives every view toward a procedural target built from
its pose crop and text, the oracle denoiser toward a caller-supplied
target latent; both use the same closed-form deterministic update, so
pipeline tests isolate orchestration from model behavior.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import ndimage

from .core import ImageBuffer, LatentTensor, Rng
from .errors import BackendError
from .image_ops import resize_plane, to_u8
from .joint_diffusion import NoiseSchedule
from .view_scheduler import ViewRect

__all__ = [
    "DenoiserBackend",
    "LatentCodec",
    "IdentityDenoiser",
    "OracleDenoiser",
    "ToyDenoiser",
    "ToyCodec",
    "guided_step",
    "toy_segment",
    "toy_inpaint",
    "check_denoiser_contract",
]

CHROMA_BG = (0, 255, 0)


class DenoiserBackend:
    """Contract for one denoise step on a native-size latent view.

    Attributes: view_h, view_w (native latent view), channels (C_z),
    concurrent (safe for parallel step calls), deterministic (identical
    inputs give identical outputs). step must preserve the input shape
    and return finite values.
    """

    view_h: int = 128
    view_w: int = 128
    channels: int = 3
    concurrent: bool = False
    deterministic: bool = False

    def step(
        self, x: np.ndarray, pose: ImageBuffer, text: str, t: int, t_next: int, view: ViewRect
    ) -> np.ndarray:
        raise NotImplementedError


class LatentCodec:
    """Pixel <-> latent mapping with a fixed spatial factor."""

    factor: int = 8
    channels: int = 3

    def encode(self, img: ImageBuffer) -> LatentTensor:
        raise NotImplementedError

    def decode(self, z: LatentTensor) -> ImageBuffer:
        raise NotImplementedError


def guided_step(
    x: np.ndarray, target: np.ndarray, schedule: NoiseSchedule, t: int, t_next: int
) -> np.ndarray:
    """Deterministic update of x_t toward a target latent.

    The implied noise eps = (x_t - sqrt(ab_t) * target) / sqrt(1 - ab_t)
    is kept fixed while the signal fraction moves from ab_t to ab_next;
    at t_next == 0 this returns the clean estimate exactly.
    """
    if t_next >= t:
        raise ValueError(f"t_next ({t_next}) must be below t ({t})")
    ab_t = schedule.alpha_bar(t)
    ab_n = schedule.alpha_bar(t_next)
    sq_t = np.sqrt(ab_t)
    sq1m_t = np.sqrt(1.0 - ab_t)
    x64 = x.astype(np.float64)
    tgt = target.astype(np.float64)
    eps_hat = (x64 - sq_t * tgt) / sq1m_t
    z0_hat = (x64 - sq1m_t * eps_hat) / sq_t
    out = np.sqrt(ab_n) * z0_hat + np.sqrt(1.0 - ab_n) * eps_hat
    return out.astype(np.float32)


class IdentityDenoiser(DenoiserBackend):
    """Echoes its input; the fixed point of overlap averaging."""

    concurrent = True
    deterministic = True

    def __init__(self, view_h: int = 128, view_w: int = 128, channels: int = 3):
        self.view_h = view_h
        self.view_w = view_w
        self.channels = channels

    def step(self, x, pose, text, t, t_next, view):
        return x


class OracleDenoiser(DenoiserBackend):
    """Closed-form reconstruction of a known full-canvas target latent.

    Pose and text are ignored by construction; the view rectangle
    selects the matching crop of the target.
    """

    concurrent = True
    deterministic = True

    def __init__(
        self,
        schedule: NoiseSchedule,
        target: LatentTensor | None = None,
        view_h: int = 128,
        view_w: int = 128,
        channels: int = 3,
    ):
        self.schedule = schedule
        self.view_h = view_h
        self.view_w = view_w
        self.channels = channels
        self._target = target

    @property
    def target(self) -> LatentTensor | None:
        return self._target

    def set_target(self, target: LatentTensor) -> None:
        self._target = target

    def step(self, x, pose, text, t, t_next, view):
        if self._target is None:
            raise BackendError("oracle denoiser has no target latent")
        if view.h2 > self._target.height or view.w2 > self._target.width:
            raise BackendError(f"oracle target does not cover view {view}")
        hs, ws = view.slices()
        return guided_step(x, self._target.data[hs, ws], self.schedule, t, t_next)


def _text_colors(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Two deterministic RGB colors derived from the text."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    c1 = np.array([digest[0], digest[1], digest[2]], dtype=np.float64)
    c2 = np.array([digest[3], digest[4], digest[5]], dtype=np.float64)
    return c1, c2


def _fill_color(text: str) -> np.ndarray:
    # Keep the green channel low so the fill never matches the chroma key.
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.array([digest[6] | 32, digest[7] & 0x7F, digest[8] | 32], dtype=np.uint8)


class ToyDenoiser(DenoiserBackend):
    """Deterministic stand-in model: denoises toward a procedural image.

    Where the pose crop has strokes, the target is a dilated silhouette
    in a text-derived color (on the chroma-key field when chroma_field
    is set, so toy segmentation can cut the instance out); elsewhere it
    is a smooth text-derived gradient.
    """

    concurrent = True
    deterministic = True

    def __init__(
        self,
        schedule: NoiseSchedule,
        codec: "ToyCodec",
        view_h: int = 128,
        view_w: int = 128,
        chroma_field: bool = False,
        blob_radius: int = 12,
    ):
        self.schedule = schedule
        self.codec = codec
        self.view_h = view_h
        self.view_w = view_w
        self.channels = codec.channels
        self.chroma_field = chroma_field
        self.blob_radius = blob_radius

    def _target_image(self, pose: ImageBuffer, text: str) -> ImageBuffer:
        h, w = pose.height, pose.width
        if self.chroma_field:
            field = np.empty((h, w, 3), dtype=np.uint8)
            field[:] = np.array(CHROMA_BG, dtype=np.uint8)
        else:
            c1, c2 = _text_colors(text)
            ramp = np.linspace(0.0, 1.0, h)[:, None, None]
            field = to_u8((1.0 - ramp) * c1[None, None, :] + ramp * c2[None, None, :])
            field = np.broadcast_to(field, (h, w, 3)).copy()
        strokes = (pose.data > 0).any(axis=2)
        if strokes.any():
            blob = ndimage.binary_dilation(strokes, structure=np.ones((3, 3), bool), iterations=self.blob_radius)
            field[blob] = _fill_color(text)
            stroke_px = pose.data[strokes][:, :3].copy()
            if self.chroma_field:
                # keep strokes distinguishable from the chroma key
                stroke_px[:, 1] = np.minimum(stroke_px[:, 1], 180)
            field[strokes] = stroke_px
        return ImageBuffer(field, copy=False)

    def step(self, x, pose, text, t, t_next, view):
        target = self.codec.encode(self._target_image(pose, text))
        return guided_step(x, target.data, self.schedule, t, t_next)


class ToyCodec(LatentCodec):
    """Area-mean encoder and Lanczos decoder at a fixed spatial factor.

    encode maps 8-bit pixels to [-1, 1] latents by block averaging;
    decode upsamples back. Lossy by design; smooth images survive the
    round trip at PSNR >= 25 dB.
    """

    def __init__(self, factor: int = 8, channels: int = 3):
        self.factor = factor
        self.channels = channels

    def encode(self, img: ImageBuffer) -> LatentTensor:
        f = self.factor
        if img.height % f or img.width % f:
            raise ValueError(f"image dims {img.height}x{img.width} not divisible by codec factor {f}")
        if img.channels != 3:
            raise ValueError("toy codec encodes 3-channel images")
        arr = img.to_float()
        h, w = img.height // f, img.width // f
        blocks = arr.reshape(h, f, w, f, 3).mean(axis=(1, 3))
        return LatentTensor((blocks / 127.5 - 1.0).astype(np.float32), copy=False)

    def decode(self, z: LatentTensor) -> ImageBuffer:
        f = self.factor
        planes = [
            resize_plane(z.data[:, :, c].astype(np.float64), z.height * f, z.width * f)
            for c in range(z.channels)
        ]
        px = (np.stack(planes[:3], axis=2) + 1.0) * 127.5
        return ImageBuffer(to_u8(px), copy=False)


def toy_segment(
    img: ImageBuffer,
    rect: tuple[int, int, int, int],
    bg_color: tuple[int, int, int] = CHROMA_BG,
    tolerance: int = 40,
    fallback: bool = False,
) -> ImageBuffer:
    """Chroma-key segmentation inside a placement rect (x, y, w, h).

    A pixel is foreground when any channel differs from the background
    color by more than the tolerance. fallback=True returns the filled
    rect instead. The mask is zero outside the rect either way.
    """
    x, y, w, h = rect
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height or w < 1 or h < 1:
        raise ValueError(f"rect {rect} outside image {img.width}x{img.height}")
    mask = np.zeros((img.height, img.width), dtype=np.uint8)
    if fallback:
        mask[y : y + h, x : x + w] = 1
    else:
        sub = img.data[y : y + h, x : x + w].astype(np.int16)
        ref = np.array(bg_color[: img.channels], dtype=np.int16)
        diff = np.abs(sub - ref[None, None, :]).max(axis=2)
        mask[y : y + h, x : x + w] = (diff > tolerance).astype(np.uint8)
    return ImageBuffer(mask[:, :, np.newaxis], copy=False)


def _harmonic_fill(plane: np.ndarray, hole: np.ndarray, tol: float = 0.5) -> np.ndarray:
    """Neighbor-averaging fill of hole cells, coarse-to-fine initialized,
    iterated until the largest per-sweep update drops below tol."""
    cur = plane.copy()
    h, w = plane.shape
    if min(h, w) > 32:
        hp = h + (h % 2)
        wp = w + (w % 2)
        vals = np.pad(cur, ((0, hp - h), (0, wp - w)), mode="edge")
        known = np.pad(~hole, ((0, hp - h), (0, wp - w)), mode="edge")
        kv = np.where(known, vals, 0.0)
        sums = kv[0::2, 0::2] + kv[1::2, 0::2] + kv[0::2, 1::2] + kv[1::2, 1::2]
        cnts = (
            known[0::2, 0::2].astype(np.int64)
            + known[1::2, 0::2]
            + known[0::2, 1::2]
            + known[1::2, 1::2]
        )
        coarse_hole = cnts == 0
        coarse = np.where(coarse_hole, 0.0, sums / np.maximum(cnts, 1))
        coarse = _harmonic_fill(coarse, coarse_hole, tol)
        up = np.repeat(np.repeat(coarse, 2, axis=0), 2, axis=1)[:h, :w]
        cur = np.where(hole, up, cur)
    while True:
        padded = np.pad(cur, 1, mode="edge")
        nb = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])
        new = np.where(hole, nb, cur)
        delta = float(np.abs(new - cur)[hole].max())
        cur = new
        if delta < tol:
            return cur


def toy_inpaint(img: ImageBuffer, hole_mask: np.ndarray) -> ImageBuffer:
    """Heat-equation style fill of hole pixels; everything else untouched."""
    hole = np.asarray(hole_mask).astype(bool)
    if hole.shape != (img.height, img.width):
        raise ValueError(f"hole mask shape {hole.shape} does not match image {img.height}x{img.width}")
    if not hole.any():
        return img
    if hole.all():
        raise ValueError("hole covers the entire image; nothing anchors the fill")
    out = img.to_float()
    for c in range(img.channels):
        out[:, :, c] = _harmonic_fill(out[:, :, c], hole)
    filled = to_u8(out)
    filled[~hole] = img.data[~hole]
    return ImageBuffer(filled, copy=False)


def check_denoiser_contract(backend: DenoiserBackend, seed: int = 0, pose_factor: int = 8) -> None:
    """Conformance probe runnable against any backend: shape preservation,
    finiteness, and (when declared) determinism. Raises BackendError."""
    rng = Rng(seed, stream=7701)
    h, w, c = backend.view_h, backend.view_w, backend.channels
    x = rng.standard_normals(h * w * c).reshape(h, w, c).astype(np.float32)
    pose = ImageBuffer.full(h * pose_factor, w * pose_factor, (0, 0, 0))
    view = ViewRect(0, h, 0, w)
    for t, t_next in ((700, 686), (37, 0)):
        y = backend.step(x, pose, "conformance probe", t, t_next, view)
        y = np.asarray(y)
        if y.shape != x.shape:
            raise BackendError(f"step changed shape: {x.shape} -> {y.shape}")
        if not np.isfinite(y).all():
            raise BackendError(f"step produced non-finite values at t={t}")
        if backend.deterministic:
            y2 = np.asarray(backend.step(x, pose, "conformance probe", t, t_next, view))
            if not np.array_equal(y, y2):
                raise BackendError("backend declares determinism but repeated step differs")
