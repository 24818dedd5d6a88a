"""Per-view conditioning: skeleton rasterization, pixel-to-latent mask
bridging, and assembly of (latent crop, pose crop, text) for each view.

A view's text is the comma-joined description of every instance whose
latent mask intersects it (ascending id), falling back to the global
text for instance-free views.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageBuffer, LatentTensor
from .errors import ConfigError
from .view_scheduler import LatentMask, ViewRect

__all__ = [
    "BBox",
    "PoseKeypoints",
    "PartSpec",
    "InstanceSpec",
    "ConditioningConfig",
    "ConditioningContext",
    "render_pose_map",
    "downscale_mask",
    "view_inputs",
    "load_instances",
    "KEYPOINT_NAMES",
    "LIMB_SEQUENCE",
]

log = logging.getLogger(__name__)

KEYPOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

# Conventional 18-point skeleton wiring and color wheel.
LIMB_SEQUENCE = (
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (1, 0), (0, 14), (14, 16), (0, 15), (15, 17),
)

POSE_COLORS = (
    (255, 0, 0), (255, 85, 0), (255, 170, 0), (255, 255, 0), (170, 255, 0), (85, 255, 0),
    (0, 255, 0), (0, 255, 85), (0, 255, 170), (0, 255, 255), (0, 170, 255), (0, 85, 255),
    (0, 0, 255), (85, 0, 255), (170, 0, 255), (255, 0, 255), (255, 0, 170), (255, 0, 85),
)


@dataclass(frozen=True)
class BBox:
    """Pixel rectangle (x, y, w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"BBox needs positive extent, got {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class PoseKeypoints:
    """18 keypoints, each (x, y, confidence), coordinates normalized to
    the instance bbox; confidence 0 marks an absent keypoint."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.shape != (18, 3):
            raise ValueError(f"expected (18, 3) keypoints, got {p.shape}")
        conf = p[:, 2]
        if (conf < 0).any() or (conf > 1).any():
            raise ValueError("keypoint confidences must lie in [0, 1]")
        present = conf > 0
        xy = p[present, :2]
        if xy.size and ((xy < 0).any() or (xy > 1).any()):
            raise ValueError("present keypoints must have coordinates in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @classmethod
    def absent(cls) -> "PoseKeypoints":
        return cls(np.zeros((18, 3)))


@dataclass(frozen=True)
class PartSpec:
    """Optional named sub-region (head, body, ...) with its own text."""

    text: str
    image_mask: ImageBuffer | None = None
    mask: LatentMask | None = None


@dataclass(frozen=True)
class InstanceSpec:
    """One human instance: description, pose, placement, and masks.

    image_mask lives on the pixel grid of the current stage; mask is its
    latent-grid reduction. Both may be absent until the pipeline fills
    them in.
    """

    id: int
    text: str
    bbox: BBox
    pose: PoseKeypoints
    image_mask: ImageBuffer | None = None
    mask: LatentMask | None = None
    parts: dict[str, PartSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not self.text:
            raise ValueError("instance text must be non-empty")
        if self.id < 0:
            raise ValueError("instance id must be non-negative")


def _draw_disk(canvas: np.ndarray, cy: float, cx: float, radius: float, color) -> None:
    h, w = canvas.shape[:2]
    y0 = max(int(np.floor(cy - radius)), 0)
    y1 = min(int(np.ceil(cy + radius)) + 1, h)
    x0 = max(int(np.floor(cx - radius)), 0)
    x1 = min(int(np.ceil(cx + radius)) + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    hit = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    canvas[y0:y1, x0:x1][hit] = color


def _draw_segment(canvas: np.ndarray, p0, p1, radius: float, color) -> None:
    """Stamp all pixels within radius of the segment p0-p1 (y, x coords)."""
    h, w = canvas.shape[:2]
    y0 = max(int(np.floor(min(p0[0], p1[0]) - radius)), 0)
    y1 = min(int(np.ceil(max(p0[0], p1[0]) + radius)) + 1, h)
    x0 = max(int(np.floor(min(p0[1], p1[1]) - radius)), 0)
    x1 = min(int(np.ceil(max(p0[1], p1[1]) + radius)) + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = p1[0] - p0[0], p1[1] - p0[1]
    ll = dy * dy + dx * dx
    if ll == 0:
        t = np.zeros_like(yy, dtype=np.float64)
    else:
        t = np.clip(((yy - p0[0]) * dy + (xx - p0[1]) * dx) / ll, 0.0, 1.0)
    dist2 = (yy - (p0[0] + t * dy)) ** 2 + (xx - (p0[1] + t * dx)) ** 2
    canvas[y0:y1, x0:x1][dist2 <= radius * radius] = color


def render_pose_map(
    instances: list[InstanceSpec],
    canvas_w: int,
    canvas_h: int,
    limb_radius: float = 2.0,
    point_radius: float = 4.0,
) -> ImageBuffer:
    """Rasterize every instance skeleton at its placement, ascending id
    (later ids on top). Absent keypoints and their limbs are skipped."""
    if canvas_w < 1 or canvas_h < 1:
        raise ValueError("canvas dimensions must be positive")
    canvas = np.zeros((canvas_h, canvas_w, 3), dtype=np.uint8)
    for inst in sorted(instances, key=lambda i: i.id):
        pts = inst.pose.points
        px = np.empty((18, 2))
        px[:, 0] = inst.bbox.y + pts[:, 1] * (inst.bbox.h - 1)
        px[:, 1] = inst.bbox.x + pts[:, 0] * (inst.bbox.w - 1)
        conf = pts[:, 2]
        for li, (a, b) in enumerate(LIMB_SEQUENCE):
            if conf[a] > 0 and conf[b] > 0:
                _draw_segment(canvas, px[a], px[b], limb_radius, POSE_COLORS[li])
        for ki in range(18):
            if conf[ki] > 0:
                _draw_disk(canvas, px[ki, 0], px[ki, 1], point_radius, POSE_COLORS[ki])
    return ImageBuffer(canvas, copy=False)


def downscale_mask(image_mask: ImageBuffer, factor: int) -> LatentMask:
    """Max-pool a binary pixel mask onto the latent grid: a cell is set
    iff any pixel in its factor x factor block is set."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if image_mask.channels != 1:
        raise ValueError("expected a single-channel mask")
    h, w = image_mask.height, image_mask.width
    if h % factor or w % factor:
        raise ValueError(f"mask dims {h}x{w} not divisible by factor {factor}")
    m = (image_mask.data[:, :, 0] > 0).astype(np.uint8)
    blocks = m.reshape(h // factor, factor, w // factor, factor)
    return LatentMask(blocks.max(axis=(1, 3)).astype(np.uint8))


@dataclass(frozen=True)
class ConditioningConfig:
    max_tokens: int = 77
    include_parts: bool = False

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


def _mask_hits_view(mask: LatentMask | None, view: ViewRect) -> bool:
    if mask is None:
        return False
    hs, ws = view.slices()
    return bool(mask.values[hs, ws].any())


def _compose_text(
    view: ViewRect, instances: list[InstanceSpec], global_text: str, cfg: ConditioningConfig
) -> str:
    pieces: list[str] = []
    for inst in sorted(instances, key=lambda i: i.id):
        if inst.mask is None:
            raise ConfigError(f"instance {inst.id} has no latent mask; cannot condition views")
        if _mask_hits_view(inst.mask, view):
            pieces.append(inst.text)
            if cfg.include_parts:
                for name in sorted(inst.parts):
                    part = inst.parts[name]
                    if _mask_hits_view(part.mask, view):
                        pieces.append(part.text)
    text = ", ".join(pieces) if pieces else global_text
    units = text.split()
    if len(units) > cfg.max_tokens:
        log.warning("view text exceeds %d tokens (%d); truncating", cfg.max_tokens, len(units))
        text = " ".join(units[: cfg.max_tokens])
    return text


def _view_inputs_arr(
    view: ViewRect,
    z_data: np.ndarray,
    pose_map: ImageBuffer,
    instances: list[InstanceSpec],
    global_text: str,
    factor: int,
    cfg: ConditioningConfig,
) -> tuple[np.ndarray, ImageBuffer, str]:
    h_z, w_z = z_data.shape[:2]
    if view.h2 > h_z or view.w2 > w_z:
        raise ValueError(f"view {view} outside latent bounds {h_z}x{w_z}")
    if pose_map.height != h_z * factor or pose_map.width != w_z * factor:
        raise ValueError(
            f"pose map {pose_map.height}x{pose_map.width} does not match latent "
            f"{h_z}x{w_z} at factor {factor}"
        )
    hs, ws = view.slices()
    x = z_data[hs, ws].copy()
    pose_crop = ImageBuffer(
        pose_map.data[view.h1 * factor : view.h2 * factor, view.w1 * factor : view.w2 * factor]
    )
    return x, pose_crop, _compose_text(view, instances, global_text, cfg)


def view_inputs(
    view: ViewRect,
    z_t: LatentTensor,
    pose_map: ImageBuffer,
    instances: list[InstanceSpec],
    global_text: str,
    factor: int = 8,
    cfg: ConditioningConfig | None = None,
) -> tuple[np.ndarray, ImageBuffer, str]:
    """Crop the latent and pose map to the view and compose its text."""
    return _view_inputs_arr(view, z_t.data, pose_map, instances, global_text, factor, cfg or ConditioningConfig())


@dataclass
class ConditioningContext:
    """Bound conditioning state handed to the joint denoise loop."""

    pose_map: ImageBuffer
    instances: list[InstanceSpec]
    global_text: str
    factor: int = 8
    cfg: ConditioningConfig = field(default_factory=ConditioningConfig)

    def inputs_for(self, view: ViewRect, z_data: np.ndarray):
        return _view_inputs_arr(
            view, z_data, self.pose_map, self.instances, self.global_text, self.factor, self.cfg
        )


def _parse_bbox(raw, what: str) -> BBox:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise ConfigError(f"{what}: bbox must be [x, y, w, h]")
    try:
        return BBox(*(int(v) for v in raw))
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _rect_mask(bbox: BBox, canvas_w: int, canvas_h: int) -> ImageBuffer:
    m = np.zeros((canvas_h, canvas_w, 1), dtype=np.uint8)
    m[bbox.y : bbox.y1, bbox.x : bbox.x1] = 1
    return ImageBuffer(m, copy=False)


def _load_mask_png(path: Path, base_dir: Path | None, what: str) -> ImageBuffer:
    from .pngio import load_png

    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    loaded = load_png(path)
    if loaded.channels != 1:
        raise ConfigError(f"{what}: mask PNG must be single-channel: {path}")
    return ImageBuffer((loaded.data > 0).astype(np.uint8), copy=False)


def load_instances(
    raw_instances,
    base_dir: Path | None = None,
    canvas_w: int | None = None,
    canvas_h: int | None = None,
) -> list[InstanceSpec]:
    """Build InstanceSpecs from the documented JSON schema.

    Each entry: {"id": int, "text": str, "bbox": [x, y, w, h],
    "keypoints": 18 x [x, y, c] normalized to the bbox,
    optional "mask_path": PNG (nonzero = foreground),
    optional "parts": {name: {"text": str, "bbox": [...] or "mask_path": ...}}}.
    bbox-backed masks need canvas dimensions to materialize.
    """
    instances = []
    seen_ids = set()
    for n, raw in enumerate(raw_instances):
        what = f"instance[{n}]"
        try:
            inst_id = int(raw["id"])
            text = str(raw["text"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{what}: missing or invalid id/text: {exc}") from exc
        if inst_id in seen_ids:
            raise ConfigError(f"{what}: duplicate instance id {inst_id}")
        seen_ids.add(inst_id)
        bbox = _parse_bbox(raw.get("bbox"), what)
        kp_raw = raw.get("keypoints")
        if kp_raw is None:
            pose = PoseKeypoints.absent()
        else:
            try:
                pose = PoseKeypoints(np.asarray(kp_raw, dtype=np.float64))
            except ValueError as exc:
                raise ConfigError(f"{what}: {exc}") from exc
        image_mask = None
        if raw.get("mask_path"):
            image_mask = _load_mask_png(Path(raw["mask_path"]), base_dir, what)
        parts = {}
        for name, p in (raw.get("parts") or {}).items():
            pwhat = f"{what}.parts[{name}]"
            if "text" not in p:
                raise ConfigError(f"{pwhat}: part needs a text")
            if p.get("mask_path"):
                pmask = _load_mask_png(Path(p["mask_path"]), base_dir, pwhat)
            elif p.get("bbox") is not None:
                if canvas_w is None or canvas_h is None:
                    raise ConfigError(f"{pwhat}: bbox-backed part needs canvas dimensions")
                pmask = _rect_mask(_parse_bbox(p["bbox"], pwhat), canvas_w, canvas_h)
            else:
                pmask = None
            parts[name] = PartSpec(text=str(p["text"]), image_mask=pmask)
        try:
            instances.append(
                InstanceSpec(id=inst_id, text=text, bbox=bbox, pose=pose, image_mask=image_mask, parts=parts)
            )
        except ValueError as exc:
            raise ConfigError(f"{what}: {exc}") from exc
    return instances
