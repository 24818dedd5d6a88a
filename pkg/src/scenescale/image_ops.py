"""Classical pixel-domain primitives: Gaussian blur, Canny edges,
Lanczos resampling, CLAHE, and luminance-only tone normalization.

All operations are pure functions on immutable inputs. Boundary handling
is edge-replicate everywhere; 8-bit outputs round half-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ImageBuffer

__all__ = [
    "EdgeMap",
    "ClaheParams",
    "gaussian_blur",
    "canny",
    "lanczos_resize",
    "resize_plane",
    "clahe",
    "tone_normalize",
    "luma_601",
]

LANCZOS_A = 3

# ITU-R 601 luma weights, also used for the YCbCr transform below.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class EdgeMap:
    """Binary edge raster; values is a (H, W) uint8 array of {0, 1}."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.dtype != np.uint8:
            raise ValueError("EdgeMap values must be a 2-d uint8 array")
        if v.max(initial=0) > 1:
            raise ValueError("EdgeMap values must be binary")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile counts must be >= 1")
        if not self.clip_limit > 0:
            raise ValueError("clip_limit must be > 0")


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Round to nearest with .5 going up; pinned so oracles can mirror it."""
    return np.floor(x + 0.5)


def to_u8(x: np.ndarray) -> np.ndarray:
    return round_half_up(np.clip(x, 0.0, 255.0)).astype(np.uint8)


def luma_601(img: ImageBuffer) -> np.ndarray:
    """(H, W) float64 luminance; ITU-R 601 weights for 3-channel input."""
    if img.channels == 1:
        return img.plane(0)
    f = img.to_float()
    return _LUMA_R * f[:, :, 0] + _LUMA_G * f[:, :, 1] + _LUMA_B * f[:, :, 2]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian, radius ceil(3*sigma), normalized to sum 1."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian on a (H, W) real map, edge-replicate padding."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("gaussian_blur expects a single-channel (H, W) map")
    k = gaussian_kernel(sigma)
    tmp = ndimage.correlate1d(arr, k, axis=0, mode="nearest")
    return ndimage.correlate1d(tmp, k, axis=1, mode="nearest")


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def canny(img: ImageBuffer, lo: float, hi: float) -> EdgeMap:
    """Canny edges: 601 grayscale, Gaussian pre-smooth sigma 1.4, Sobel,
    non-maximum suppression over 4 quantized directions, hysteresis."""
    if not lo < hi:
        raise ValueError(f"canny thresholds must satisfy lo < hi, got {lo} >= {hi}")
    gray = luma_601(img)
    smooth = gaussian_blur(gray, 1.4)
    gx = ndimage.correlate(smooth, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(smooth, _SOBEL_X.T, mode="nearest")
    mag = np.hypot(gx, gy)

    # Quantize the gradient direction to 4 sectors (folded to [0, pi)).
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    sector = np.floor(theta / (np.pi / 4.0) + 0.5).astype(np.int64) % 4

    padded = np.pad(mag, 1, mode="constant")

    def shifted(dh: int, dw: int) -> np.ndarray:
        h, w = mag.shape
        return padded[1 + dh : 1 + dh + h, 1 + dw : 1 + dw + w]

    # (forward, backward) neighbor offsets per sector; the asymmetric
    # >=/> tie-break keeps exactly one pixel of a symmetric ridge pair.
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dh, dw) in offsets.items():
        fwd = shifted(dh, dw)
        bwd = shifted(-dh, -dw)
        keep |= (sector == s) & (mag >= fwd) & (mag > bwd)
    nms = np.where(keep, mag, 0.0)

    strong = nms > hi
    candidate = nms > lo
    edges = ndimage.binary_propagation(strong, structure=np.ones((3, 3), bool), mask=candidate)
    return EdgeMap(edges.astype(np.uint8))


def _axis_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices and normalized Lanczos-3 weights for one axis.

    Pixel-center mapping src = (dst + 0.5) * n_in/n_out - 0.5; the kernel
    is stretched by the scale factor when minifying (anti-aliasing).
    Out-of-range taps clamp to the border (edge replication).
    """
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    support = LANCZOS_A * fscale
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    left = np.ceil(centers - support).astype(np.int64)
    ntaps = int(np.floor(2.0 * support)) + 2
    idx = left[:, None] + np.arange(ntaps)[None, :]
    x = (idx - centers[:, None]) / fscale
    w = np.where(np.abs(x) < LANCZOS_A, np.sinc(x) * np.sinc(x / LANCZOS_A), 0.0)
    w /= w.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, n_in - 1), w


def _resample_axis0(arr: np.ndarray, n_out: int) -> np.ndarray:
    idx, w = _axis_taps(arr.shape[0], n_out)
    out = np.zeros((n_out,) + arr.shape[1:], dtype=np.float64)
    for k in range(idx.shape[1]):
        out += w[:, k].reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[idx[:, k]]
    return out


def resize_plane(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Lanczos-3 resample of a (H, W) real map to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target dimensions must be >= 1")
    arr = np.asarray(plane, dtype=np.float64)
    tmp = _resample_axis0(arr, out_h)
    return _resample_axis0(tmp.T, out_w).T


def lanczos_resize(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Lanczos-3 resize per channel, clamped to [0, 255]."""
    if out_w < 1 or out_h < 1:
        raise ValueError("target dimensions must be >= 1")
    planes = [resize_plane(img.data[:, :, c].astype(np.float64), out_h, out_w) for c in range(img.channels)]
    return ImageBuffer(to_u8(np.stack(planes, axis=2)), copy=False)


def tile_bounds(n: int, tiles: int) -> list[tuple[int, int]]:
    """Half-open tile ranges covering [0, n); every tile must be non-empty."""
    edges = [int(round(i * n / tiles)) for i in range(tiles + 1)]
    spans = list(zip(edges[:-1], edges[1:]))
    if any(hi <= lo for lo, hi in spans):
        raise ValueError(f"degenerate tile: cannot split {n} pixels into {tiles} tiles")
    return spans


def clahe_tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """256-entry mapping for one tile: clip histogram at
    clip_limit * area / 256, spread the excess uniformly over all bins,
    then map through the scaled CDF (round half up)."""
    area = tile.size
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    threshold = clip_limit * area / 256.0
    excess = np.maximum(hist - threshold, 0.0).sum()
    clipped = np.minimum(hist, threshold) + excess / 256.0
    cdf = np.cumsum(clipped) / float(area)
    return np.clip(round_half_up(255.0 * cdf), 0, 255).astype(np.uint8)


def _interp_coords(n: int, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For every pixel coordinate: the two bracketing tile indices and the
    blend weight toward the upper one; clamps outside the center span."""
    pos = np.arange(n, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="left")
    hi = np.clip(hi, 0, len(centers) - 1)
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(w, 0.0, 1.0)


def clahe(img: ImageBuffer, params: ClaheParams) -> ImageBuffer:
    """Contrast-limited adaptive histogram equalization on a 1-channel image.

    Per-tile clipped-histogram mappings (see clahe_tile_lut) are blended
    bilinearly between the four surrounding tile centers.
    """
    if img.channels != 1:
        raise ValueError("clahe expects a single-channel image")
    gray = img.data[:, :, 0]
    h, w = gray.shape
    rows = tile_bounds(h, params.tiles_y)
    cols = tile_bounds(w, params.tiles_x)

    luts = np.empty((params.tiles_y, params.tiles_x, 256), dtype=np.uint8)
    for ty, (r0, r1) in enumerate(rows):
        for tx, (c0, c1) in enumerate(cols):
            luts[ty, tx] = clahe_tile_lut(gray[r0:r1, c0:c1], params.clip_limit)

    cy = np.array([(r0 + r1 - 1) / 2.0 for r0, r1 in rows])
    cx = np.array([(c0 + c1 - 1) / 2.0 for c0, c1 in cols])
    ylo, yhi, wy = _interp_coords(h, cy)
    xlo, xhi, wx = _interp_coords(w, cx)

    def mapped(ty_idx: np.ndarray, tx_idx: np.ndarray) -> np.ndarray:
        return luts[ty_idx[:, None], tx_idx[None, :], gray].astype(np.float64)

    out = (
        (1 - wy)[:, None] * ((1 - wx)[None, :] * mapped(ylo, xlo) + wx[None, :] * mapped(ylo, xhi))
        + wy[:, None] * ((1 - wx)[None, :] * mapped(yhi, xlo) + wx[None, :] * mapped(yhi, xhi))
    )
    return ImageBuffer(to_u8(out), copy=False)


def _rgb_to_ycbcr(f: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    y = _LUMA_R * r + _LUMA_G * g + _LUMA_B * b
    cb = 128.0 + (b - y) * (0.5 / (1.0 - _LUMA_B))
    cr = 128.0 + (r - y) * (0.5 / (1.0 - _LUMA_R))
    return y, cb, cr


def _ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    r = y + (cr - 128.0) * ((1.0 - _LUMA_R) / 0.5)
    b = y + (cb - 128.0) * ((1.0 - _LUMA_B) / 0.5)
    g = (y - _LUMA_R * r - _LUMA_B * b) / _LUMA_G
    return np.stack([r, g, b], axis=2)


def tone_normalize(img: ImageBuffer, params: ClaheParams | None = None) -> ImageBuffer:
    """Equalize luminance only: CLAHE on the 601 luma channel, chroma kept
    at full precision through the round trip."""
    if img.channels != 3:
        raise ValueError("tone_normalize expects a 3-channel image")
    params = params or ClaheParams()
    y, cb, cr = _rgb_to_ycbcr(img.to_float())
    y8 = ImageBuffer(to_u8(y)[:, :, np.newaxis], copy=False)
    y_eq = clahe(y8, params).plane(0)
    return ImageBuffer(to_u8(_ycbcr_to_rgb(y_eq, cb, cr)), copy=False)
