"""Edge-aware pixel perturbation and the forward-diffusion entry point.

The probability map is low near edges and high far from them, and a
pixel is replaced when its uniform draw exceeds the map value, so detail
injection stays away from borders where it would flicker. Replacement
copies a source pixel within a small radius of the back-projected
coordinate, re-introducing high-frequency content before noising.

Draw-stream contract (replayable from the counter-based RNG): pixels in
raster order consume one uniform for the replacement test and, only
when replacing, two more for the row/column offsets, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import ImageBuffer, LatentTensor, Rng
from .image_ops import canny, gaussian_blur, lanczos_resize, resize_plane
from .joint_diffusion import NoiseSchedule, forward_diffuse

__all__ = [
    "PerturbParams",
    "ProbabilityMap",
    "build_probability_map",
    "adaptive_pixel_perturb",
    "perturb_with_trace",
    "hf_forward_diffuse",
    "forward_diffuse",
    "upsampled_dims",
]


@dataclass(frozen=True)
class PerturbParams:
    d_r: int = 4
    sigma: float = 50.0
    alpha_interp: float = 2.0
    p_max: float = 0.1
    p_base: float = 0.005
    canny_lo: float = 100.0
    canny_hi: float = 200.0
    flip_inequality: bool = False

    def __post_init__(self):
        if self.d_r < 0:
            raise ValueError("d_r must be >= 0")
        if self.alpha_interp < 1.0:
            raise ValueError("alpha_interp must be >= 1")
        if not 0.0 <= self.p_base <= self.p_max <= 1.0:
            raise ValueError("need 0 <= p_base <= p_max <= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.canny_lo < self.canny_hi:
            raise ValueError("canny thresholds must satisfy lo < hi")


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel replacement-test threshold at the upsampled resolution."""

    values: np.ndarray
    p_base: float
    p_max: float

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.dtype != np.float64:
            raise ValueError("ProbabilityMap values must be a 2-d float64 array")
        if v.size and (v.min() < self.p_base - 1e-12 or v.max() > self.p_max + 1e-12):
            raise ValueError("ProbabilityMap values must lie in [p_base, p_max]")
        v.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def upsampled_dims(height: int, width: int, alpha: float) -> tuple[int, int]:
    return int(round(alpha * height)), int(round(alpha * width))


def build_probability_map(img: ImageBuffer, params: PerturbParams) -> ProbabilityMap:
    """Canny edges, Gaussian-blurred, upsampled to the target resolution,
    normalized to [0, 1] by the map maximum (an all-zero map stays zero),
    then mapped affinely onto [p_base, p_max].

    Normalizing after interpolation means the bounds are attained exactly
    whenever the image has edges.
    """
    edges = canny(img, params.canny_lo, params.canny_hi).values.astype(np.float64)
    blurred = gaussian_blur(edges, params.sigma)
    out_h, out_w = upsampled_dims(img.height, img.width, params.alpha_interp)
    up = resize_plane(blurred, out_h, out_w)
    peak = up.max()
    if peak > 0:
        up /= peak
    values = (params.p_max - params.p_base) * up + params.p_base
    np.clip(values, params.p_base, params.p_max, out=values)
    return ProbabilityMap(values=values, p_base=params.p_base, p_max=params.p_max)


@njit(cache=True)
def _philox_unit(key0, key1, idx):
    """Scalar Philox4x32-10 uniform; bit-identical to core.Rng draws."""
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    mask = np.uint64(0xFFFFFFFF)
    c0 = idx & mask
    c1 = idx >> np.uint64(32)
    c2 = np.uint64(0)
    c3 = np.uint64(0)
    k0 = key0
    k1 = key1
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        n0 = (p1 >> np.uint64(32)) ^ c1 ^ k0
        n1 = p1 & mask
        n2 = (p0 >> np.uint64(32)) ^ c3 ^ k1
        n3 = p0 & mask
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    hi = np.float64(c0 >> np.uint64(5))
    lo = np.float64(c1 >> np.uint64(6))
    return (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _perturb_kernel(out, replaced, src, cmap, alpha, d_r, key0, key1, start, flip):
    out_h, out_w = cmap.shape
    src_h, src_w = src.shape[0], src.shape[1]
    nch = src.shape[2]
    c = start
    one = np.uint64(1)
    span = 2 * d_r + 1
    for h in range(out_h):
        base_h = int(np.floor((h + 0.5) / alpha))
        for w in range(out_w):
            u = _philox_unit(key0, key1, c)
            c += one
            if flip:
                rep = u < cmap[h, w]
            else:
                rep = u > cmap[h, w]
            if rep:
                u1 = _philox_unit(key0, key1, c)
                c += one
                u2 = _philox_unit(key0, key1, c)
                c += one
                sh = base_h + int(u1 * span) - d_r
                sw = int(np.floor((w + 0.5) / alpha)) + int(u2 * span) - d_r
                if sh < 0:
                    sh = 0
                elif sh >= src_h:
                    sh = src_h - 1
                if sw < 0:
                    sw = 0
                elif sw >= src_w:
                    sw = src_w - 1
                for ch in range(nch):
                    out[h, w, ch] = src[sh, sw, ch]
                replaced[h, w] = True
    return c


def perturb_with_trace(
    img: ImageBuffer,
    pmap: ProbabilityMap,
    params: PerturbParams,
    rng: Rng,
    upsampled: ImageBuffer | None = None,
) -> tuple[ImageBuffer, np.ndarray]:
    """adaptive_pixel_perturb plus the boolean replacement mask.

    The output starts as the Lanczos upsample (precomputable via
    upsampled); a replaced pixel copies the source pixel at the rounded
    back-projection of its coordinate plus offsets drawn from
    [-d_r, d_r], clamped inside the source image.
    """
    out_h, out_w = upsampled_dims(img.height, img.width, params.alpha_interp)
    if (pmap.height, pmap.width) != (out_h, out_w):
        raise ValueError(
            f"probability map {pmap.height}x{pmap.width} does not match "
            f"upsampled dims {out_h}x{out_w} (alpha={params.alpha_interp})"
        )
    if upsampled is None:
        upsampled = lanczos_resize(img, out_w, out_h)
    elif (upsampled.height, upsampled.width) != (out_h, out_w):
        raise ValueError("precomputed upsample has wrong dimensions")
    out = np.array(upsampled.data, copy=True)
    replaced = np.zeros((out_h, out_w), dtype=np.bool_)
    key0, key1 = rng.key
    start = rng.counter
    end = _perturb_kernel(
        out,
        replaced,
        img.data,
        pmap.values,
        float(params.alpha_interp),
        int(params.d_r),
        np.uint64(key0),
        np.uint64(key1),
        np.uint64(start),
        bool(params.flip_inequality),
    )
    rng.advance(int(end) - start)
    return ImageBuffer(out, copy=False), replaced


def adaptive_pixel_perturb(
    img: ImageBuffer,
    pmap: ProbabilityMap,
    params: PerturbParams,
    rng: Rng,
    upsampled: ImageBuffer | None = None,
) -> ImageBuffer:
    """Upsample by alpha_interp and re-inject source detail per the map."""
    out, _ = perturb_with_trace(img, pmap, params, rng, upsampled)
    return out


def hf_forward_diffuse(
    img: ImageBuffer, codec, schedule: NoiseSchedule, t_b: int, rng: Rng
) -> LatentTensor:
    """Encode the (perturbed) image and noise the latent to timestep t_b."""
    z0 = codec.encode(img)
    return forward_diffuse(z0, t_b, schedule, rng)
