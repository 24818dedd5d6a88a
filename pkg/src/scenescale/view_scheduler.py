"""View-rectangle scheduling for tiled joint denoising.

A coarse background stride covers the whole latent; default views whose
overlap with the instance mask exceeds a threshold additionally spawn a
finer grid of views, so human regions get denser sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ViewRect", "StrideParams", "LatentMask", "default_views", "adaptive_views", "coverage_counts"]


@dataclass(frozen=True, order=True)
class ViewRect:
    """One denoising window on the latent grid; half-open [h1,h2) x [w1,w2)."""

    h1: int
    h2: int
    w1: int
    w2: int

    def __post_init__(self):
        if not (0 <= self.h1 < self.h2 and 0 <= self.w1 < self.w2):
            raise ValueError(f"degenerate view rectangle {self}")

    @property
    def height(self) -> int:
        return self.h2 - self.h1

    @property
    def width(self) -> int:
        return self.w2 - self.w1

    def slices(self) -> tuple[slice, slice]:
        return slice(self.h1, self.h2), slice(self.w1, self.w2)


@dataclass(frozen=True)
class StrideParams:
    view_h: int = 128
    view_w: int = 128
    s_back: int = 64
    s_inst: int = 32
    beta_over: float = 0.2

    def __post_init__(self):
        if self.view_h < 1 or self.view_w < 1:
            raise ValueError("view dimensions must be positive")
        if self.s_inst < 1 or self.s_back < 1:
            raise ValueError("strides must be positive")
        if self.s_inst > self.s_back:
            raise ValueError("instance stride must not exceed background stride")
        if self.s_back % self.s_inst != 0:
            raise ValueError(f"background stride {self.s_back} must be a multiple of instance stride {self.s_inst}")
        if not 0.0 <= self.beta_over <= 1.0:
            raise ValueError("beta_over must lie in [0, 1]")

    @property
    def refine_ratio(self) -> int:
        return self.s_back // self.s_inst


@dataclass(frozen=True)
class LatentMask:
    """Binary (H_z, W_z) instance footprint on the latent grid."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.dtype != np.uint8:
            raise ValueError("LatentMask values must be a 2-d uint8 array")
        if v.max(initial=0) > 1:
            raise ValueError("LatentMask values must be binary")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "LatentMask":
        return cls(np.zeros((height, width), dtype=np.uint8))


def _check_grid(h_z: int, w_z: int, params: StrideParams) -> None:
    if params.view_h > h_z or params.view_w > w_z:
        raise ValueError(f"view {params.view_h}x{params.view_w} exceeds latent {h_z}x{w_z}")
    if (h_z - params.view_h) % params.s_back != 0 or (w_z - params.view_w) % params.s_back != 0:
        raise ValueError(
            f"latent dims minus view dims must be divisible by the background stride: "
            f"({h_z}-{params.view_h}, {w_z}-{params.view_w}) vs stride {params.s_back}"
        )


def default_views(h_z: int, w_z: int, params: StrideParams) -> list[ViewRect]:
    """Row-major coarse grid of views at the background stride."""
    _check_grid(h_z, w_z, params)
    n_h = (h_z - params.view_h) // params.s_back + 1
    n_w = (w_z - params.view_w) // params.s_back + 1
    views = []
    for i in range(n_h * n_w):
        h1 = (i // n_w) * params.s_back
        w1 = (i % n_w) * params.s_back
        views.append(ViewRect(h1, h1 + params.view_h, w1, w1 + params.view_w))
    return views


def adaptive_views(
    h_z: int, w_z: int, params: StrideParams, masks: list[LatentMask]
) -> tuple[list[ViewRect], int]:
    """Default views plus fine-stride refinements around instance regions.

    A default view refines when the fraction of its area covered by the
    union mask strictly exceeds beta_over. Refinements are offset by
    multiples of the instance stride from the default origin, clamped to
    the canvas; rectangles that collide after clamping are dropped.
    Returns the ordered view list and its length.
    """
    views = default_views(h_z, w_z, params)
    r = params.refine_ratio
    if r == 1 or not masks:
        return views, len(views)

    total = np.zeros((h_z, w_z), dtype=np.uint8)
    for m in masks:
        if m.values.shape != (h_z, w_z):
            raise ValueError(f"mask shape {m.values.shape} does not match latent {h_z}x{w_z}")
        total |= m.values

    view_area = params.view_h * params.view_w
    max_h1 = h_z - params.view_h
    max_w1 = w_z - params.view_w
    out = list(views)
    seen = {(v.h1, v.w1) for v in views}
    for v in views:
        r_over = int(total[v.h1 : v.h2, v.w1 : v.w2].sum()) / view_area
        if r_over > params.beta_over:
            for a in range(r):
                for b in range(r):
                    if a == 0 and b == 0:
                        continue
                    h1 = min(v.h1 + a * params.s_inst, max_h1)
                    w1 = min(v.w1 + b * params.s_inst, max_w1)
                    if (h1, w1) not in seen:
                        seen.add((h1, w1))
                        out.append(ViewRect(h1, h1 + params.view_h, w1, w1 + params.view_w))
    return out, len(out)


def coverage_counts(views: list[ViewRect], h_z: int, w_z: int) -> np.ndarray:
    """Per-cell count of covering views, shape (H_z, W_z) int64."""
    counts = np.zeros((h_z, w_z), dtype=np.int64)
    for v in views:
        if v.h2 > h_z or v.w2 > w_z:
            raise ValueError(f"view {v} exceeds latent bounds {h_z}x{w_z}")
        counts[v.h1 : v.h2, v.w1 : v.w2] += 1
    return counts
