"""Shared value types and the deterministic counter-based RNG.

Every random draw in this package is a pure function of (seed, stream,
draw index), so any consumer can replay an exact draw stream from the
documented consumption order without sharing generator objects.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng", "ImageBuffer", "LatentTensor"]

_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Philox4x32-10 round constants (Salmon et al. counter-based generator).
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)


def _mix64(x: int) -> int:
    """splitmix64 finalizer; full-avalanche 64-bit mixing."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def philox_words(counters: np.ndarray, key0: np.uint64, key1: np.uint64):
    """Run Philox4x32-10 on an array of 64-bit draw indices.

    The index supplies counter words (c0, c1); c2 = c3 = 0. Returns the
    first two 32-bit output words as uint64 arrays.
    """
    c0 = counters & _MASK32
    c1 = counters >> np.uint64(32)
    c2 = np.zeros_like(counters)
    c3 = np.zeros_like(counters)
    k0 = np.uint64(key0)
    k1 = np.uint64(key1)
    for _ in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _PHILOX_W0) & _MASK32
        k1 = (k1 + _PHILOX_W1) & _MASK32
    return c0, c1


def _words_to_unit(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """53-bit uniform double in [0, 1) from two 32-bit words."""
    hi = (x0 >> np.uint64(5)).astype(np.float64)  # 27 bits
    lo = (x1 >> np.uint64(6)).astype(np.float64)  # 26 bits
    return (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0)


def derive_key(seed: int, stream: int) -> tuple[int, int]:
    """64-bit Philox key for a (seed, stream) pair, as two 32-bit words."""
    k = _mix64(_mix64(seed & _MASK64) ^ ((stream & _MASK64) * 0xD2B74407B8271691 & _MASK64))
    return k & 0xFFFFFFFF, k >> 32


class Rng:
    """Deterministic uniform / normal source with a replayable stream.

    Implementation: Philox4x32-10 keyed on (seed, stream); the i-th
    uniform comes from counter block i, so the sequence is identical
    across runs and platforms. Normals use Box-Muller with a fixed cost
    of exactly two uniform draws per sample.

    A single Rng must not be shared across threads; parallel work takes
    independent sub-streams via spawn().
    """

    __slots__ = ("seed", "stream", "_key0", "_key1", "_counter")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        k0, k1 = derive_key(self.seed, self.stream)
        self._key0 = np.uint64(k0)
        self._key1 = np.uint64(k1)
        self._counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream}, counter={self._counter})"

    @property
    def key(self) -> tuple[int, int]:
        return int(self._key0), int(self._key1)

    @property
    def counter(self) -> int:
        """Index of the next uniform draw."""
        return self._counter

    def advance(self, n: int) -> None:
        """Skip n uniform draws (used after an external kernel consumed them)."""
        if n < 0:
            raise ValueError("cannot rewind an Rng")
        self._counter += int(n)

    def spawn(self, index: int) -> "Rng":
        """Independent, deterministically derived sub-stream."""
        return Rng(self.seed, _mix64((self.stream << 1) ^ 0x5DEECE66D) ^ (index + 1))

    def uniforms(self, n: int) -> np.ndarray:
        """n consecutive uniform draws in [0, 1) as float64."""
        counters = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += int(n)
        x0, x1 = philox_words(counters, self._key0, self._key1)
        return _words_to_unit(x0, x1)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def randint(self, lo: int, hi: int) -> int:
        """Integer draw in [lo, hi] inclusive; consumes one uniform."""
        if hi < lo:
            raise ValueError("empty randint range")
        return lo + int(self.uniform() * (hi - lo + 1))

    def standard_normals(self, n: int) -> np.ndarray:
        """n standard-normal draws; consumes exactly 2n uniforms (Box-Muller)."""
        u = self.uniforms(2 * n)
        u1 = u[0::2]
        u2 = u[1::2]
        # 1 - u1 is in (0, 1], so the log is finite.
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def standard_normal(self) -> float:
        return float(self.standard_normals(1)[0])


class ImageBuffer:
    """8-bit raster, shape (height, width, channels) with channels in {1, 3}."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, *, copy: bool = True):
        arr = np.array(data, dtype=np.uint8, copy=copy)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"ImageBuffer needs (H, W, 1|3) uint8 samples, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("ImageBuffer dimensions must be positive")
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_float(self) -> np.ndarray:
        """Writable float64 copy, same shape."""
        return self.data.astype(np.float64)

    def plane(self, index: int = 0) -> np.ndarray:
        """One channel as a float64 (H, W) map."""
        return self.data[:, :, index].astype(np.float64)

    @classmethod
    def full(cls, height: int, width: int, color) -> "ImageBuffer":
        color_arr = np.atleast_1d(np.asarray(color, dtype=np.uint8))
        out = np.empty((height, width, color_arr.size), dtype=np.uint8)
        out[:] = color_arr
        return cls(out, copy=False)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


class LatentTensor:
    """Real-valued latent grid, shape (H_z, W_z, C_z), float32, all finite.

    float32 storage is deliberate: overlap averaging accumulates in
    float64, and count * x / count is then exact, which makes the
    identity-backend fixed point bit-exact.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, *, copy: bool = True):
        arr = np.array(data, dtype=np.float32, copy=copy)
        if arr.ndim != 3:
            raise ValueError(f"LatentTensor needs (H, W, C) samples, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("LatentTensor samples must be finite")
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "LatentTensor":
        return cls(np.zeros((height, width, channels), dtype=np.float32), copy=False)

    def __eq__(self, other):
        if not isinstance(other, LatentTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))
