"""End-to-end orchestration: compose the base collage from per-instance
generations, then enlarge it stage by stage (perturb, noise, jointly
denoise), with deterministic seeds, artifact bundles, and a per-policy
compute estimator.

Stage k runs with seed XOR k, so any stage is replayable in isolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backends import DenoiserBackend, LatentCodec, OracleDenoiser, ToyCodec, ToyDenoiser, toy_inpaint, toy_segment
from .conditioner import (
    BBox,
    ConditioningConfig,
    ConditioningContext,
    InstanceSpec,
    PartSpec,
    downscale_mask,
    load_instances,
    render_pose_map,
)
from .core import ImageBuffer, LatentTensor, Rng
from .errors import BackendError, ConfigError, PipelineError
from .hf_injection import PerturbParams, build_probability_map, hf_forward_diffuse, perturb_with_trace, upsampled_dims
from .image_ops import ClaheParams, lanczos_resize, tone_normalize
from .joint_diffusion import NoiseSchedule, forward_diffuse, joint_denoise, make_schedule, make_step_plan
from .pngio import save_png, sha256_file
from .view_scheduler import LatentMask, StrideParams, ViewRect, adaptive_views, coverage_counts, default_views

__all__ = [
    "SceneSpec",
    "StageConfig",
    "BackendBundle",
    "FlopsModel",
    "FlopsReport",
    "BaseResult",
    "StageResult",
    "RunResult",
    "toy_bundle",
    "oracle_bundle",
    "generate_base",
    "enlarge_stage",
    "run",
    "estimate_flops",
    "stage_latent_dims",
    "stage_mask_preview",
    "load_scene",
]


@dataclass(frozen=True)
class SceneSpec:
    canvas_w: int
    canvas_h: int
    global_text: str
    background_text: str
    instances: tuple[InstanceSpec, ...] = ()
    base_res: int = 1024

    def __post_init__(self):
        if self.canvas_w < 1 or self.canvas_h < 1:
            raise ConfigError("canvas dimensions must be positive")
        if not self.global_text:
            raise ConfigError("global_text must be non-empty")
        if self.base_res < 8:
            raise ConfigError("base_res too small")
        for inst in self.instances:
            b = inst.bbox
            if b.x < 0 or b.y < 0 or b.x1 > self.canvas_w or b.y1 > self.canvas_h:
                raise ConfigError(
                    f"instance {inst.id} placement {b} overflows canvas "
                    f"{self.canvas_w}x{self.canvas_h}"
                )
        object.__setattr__(self, "instances", tuple(self.instances))


@dataclass(frozen=True)
class StageConfig:
    alpha_interp: float = 2.0
    t_b: int = 700
    steps: int = 50
    stride: StrideParams = field(default_factory=StrideParams)
    perturb: PerturbParams = field(default_factory=PerturbParams)
    tone_normalize_after: bool = False

    def __post_init__(self):
        if self.alpha_interp < 1.0:
            raise ConfigError("alpha_interp must be >= 1")
        if self.t_b < 0:
            raise ConfigError("t_b must be >= 0")
        if self.t_b == 0 and self.alpha_interp == 1.0:
            raise ConfigError("a stage with alpha_interp == 1 needs t_b > 0 (refinement-only stage)")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        # the perturbation ratio always follows the stage ratio
        object.__setattr__(self, "perturb", replace(self.perturb, alpha_interp=self.alpha_interp))


@dataclass
class BackendBundle:
    """Everything the pipeline calls across the model boundary."""

    schedule: NoiseSchedule
    denoiser: DenoiserBackend
    codec: LatentCodec
    segment: object = toy_segment
    inpaint: object = toy_inpaint
    instance_denoiser: DenoiserBackend | None = None
    prepare_stage: object | None = None  # callable(stage_index, padded_upsample, bundle)

    def denoiser_for_instances(self) -> DenoiserBackend:
        return self.instance_denoiser or self.denoiser


def toy_bundle(schedule: NoiseSchedule | None = None, view: int = 128, factor: int = 8) -> BackendBundle:
    """Fully deterministic toy stack: procedural denoisers plus the
    area-mean/Lanczos codec; instances render on the chroma-key field."""
    schedule = schedule or make_schedule()
    codec = ToyCodec(factor=factor)
    return BackendBundle(
        schedule=schedule,
        denoiser=ToyDenoiser(schedule, codec, view_h=view, view_w=view, chroma_field=False),
        codec=codec,
        instance_denoiser=ToyDenoiser(schedule, codec, view_h=view, view_w=view, chroma_field=True),
    )


def oracle_bundle(
    schedule: NoiseSchedule | None = None,
    view: int = 128,
    factor: int = 8,
    target_image: ImageBuffer | None = None,
) -> BackendBundle:
    """Oracle stack for stitching checks. Each enlargement stage retargets
    the oracle: at target_image resized to the stage grid when given,
    else at the stage's own upsampled input (the fixed-point mode)."""
    schedule = schedule or make_schedule()
    codec = ToyCodec(factor=factor)
    oracle = OracleDenoiser(schedule, view_h=view, view_w=view, channels=codec.channels)

    def prepare(stage_index: int, padded_upsample: ImageBuffer, bundle: BackendBundle) -> None:
        if target_image is None:
            target = padded_upsample
        else:
            target = lanczos_resize(target_image, padded_upsample.width, padded_upsample.height)
        oracle.set_target(bundle.codec.encode(target))

    return BackendBundle(schedule=schedule, denoiser=oracle, codec=codec, prepare_stage=prepare)


def _valid_dims(h: int, w: int, factor: int, stride: StrideParams) -> tuple[int, int]:
    """Smallest (H, W) >= (h, w) where the latent admits the stride grid."""

    def up(n: int, view: int, s: int) -> int:
        base = factor * view
        if n <= base:
            return base
        step = factor * s
        return base + math.ceil((n - base) / step) * step

    return up(h, stride.view_h, stride.s_back), up(w, stride.view_w, stride.s_back)


def _pad_image(img: ImageBuffer, ph: int, pw: int, mode: str = "edge") -> ImageBuffer:
    if (img.height, img.width) == (ph, pw):
        return img
    arr = np.pad(img.data, ((0, ph - img.height), (0, pw - img.width), (0, 0)), mode=mode)
    return ImageBuffer(arr, copy=False)


def _nearest_resize_mask(mask: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    ys = np.minimum((np.arange(out_h) + 0.5) * mask.height / out_h, mask.height - 1).astype(np.int64)
    xs = np.minimum((np.arange(out_w) + 0.5) * mask.width / out_w, mask.width - 1).astype(np.int64)
    return ImageBuffer(mask.data[ys][:, xs], copy=False)


def _nearest_resize_image(img: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    return _nearest_resize_mask(img, out_h, out_w)


def _bbox_of_mask(mask: ImageBuffer) -> BBox | None:
    nz = np.nonzero(mask.data[:, :, 0])
    if nz[0].size == 0:
        return None
    y0, y1 = int(nz[0].min()), int(nz[0].max()) + 1
    x0, x1 = int(nz[1].min()), int(nz[1].max()) + 1
    return BBox(x0, y0, x1 - x0, y1 - y0)


def _latent_mask_at(image_mask: ImageBuffer, ph: int, pw: int, factor: int) -> LatentMask:
    padded = np.pad(
        image_mask.data,
        ((0, ph - image_mask.height), (0, pw - image_mask.width), (0, 0)),
        mode="constant",
    )
    return downscale_mask(ImageBuffer(padded, copy=False), factor)


def _noise_latent(rng: Rng, h: int, w: int, c: int) -> LatentTensor:
    return LatentTensor(rng.standard_normals(h * w * c).reshape(h, w, c).astype(np.float32), copy=False)


@dataclass
class BaseResult:
    image: ImageBuffer
    instances: tuple[InstanceSpec, ...]
    pose_map: ImageBuffer
    background: ImageBuffer

    @property
    def masks(self) -> dict[int, ImageBuffer]:
        return {i.id: i.image_mask for i in self.instances if i.image_mask is not None}


@dataclass
class StageResult:
    image: ImageBuffer
    instances: tuple[InstanceSpec, ...]
    pose_map: ImageBuffer
    prob_map: object
    views: list[ViewRect]
    replaced_fraction: float


@dataclass
class RunResult:
    final_image: ImageBuffer
    base: BaseResult
    stages: list[StageResult]
    manifest: dict | None
    out_dir: Path | None


def _instance_gen_bbox(bbox: BBox, base_res: int, fill: float = 0.9) -> BBox:
    """Scale the placement bbox into the generation canvas, centered,
    aspect preserved."""
    s = fill * base_res / max(bbox.w, bbox.h)
    gw = max(1, round(bbox.w * s))
    gh = max(1, round(bbox.h * s))
    return BBox((base_res - gw) // 2, (base_res - gh) // 2, gw, gh)


def _update_parts(
    parts: dict[str, PartSpec], out_h: int, out_w: int, ph: int, pw: int, factor: int
) -> dict[str, PartSpec]:
    updated = {}
    for name, part in parts.items():
        if part.image_mask is None:
            updated[name] = part
            continue
        up = _nearest_resize_mask(part.image_mask, out_h, out_w)
        updated[name] = replace(part, image_mask=up, mask=_latent_mask_at(up, ph, pw, factor))
    return updated


def generate_base(
    scene: SceneSpec,
    bundle: BackendBundle,
    rng: Rng,
    steps: int = 50,
    stride: StrideParams | None = None,
    clahe_params: ClaheParams | None = None,
    cond_cfg: ConditioningConfig | None = None,
) -> BaseResult:
    """Compose the detailed base image: per-instance generation at the
    training resolution, segmentation, placement, background inpainting
    behind the instances, then whole-collage tone normalization."""
    codec = bundle.codec
    den = bundle.denoiser_for_instances()
    f = codec.factor
    if scene.base_res != den.view_h * f or scene.base_res != den.view_w * f:
        raise ConfigError(
            f"base_res {scene.base_res} must equal backend view "
            f"{den.view_h}x{den.view_w} times codec factor {f}"
        )
    stride = stride or StrideParams(view_h=bundle.denoiser.view_h, view_w=bundle.denoiser.view_w)
    cond_cfg = cond_cfg or ConditioningConfig()
    pose_map = render_pose_map(list(scene.instances), scene.canvas_w, scene.canvas_h)

    # Per-instance generation at training resolution, then segment + place.
    layers: dict[int, tuple[ImageBuffer, ImageBuffer]] = {}
    gen_view = ViewRect(0, den.view_h, 0, den.view_w)
    plan = make_step_plan(bundle.schedule.t_train, steps)
    for inst in sorted(scene.instances, key=lambda i: i.id):
        gen_rng = rng.spawn(inst.id + 1)
        gen_bbox = _instance_gen_bbox(inst.bbox, scene.base_res)
        gen_pose = render_pose_map([replace(inst, bbox=gen_bbox)], scene.base_res, scene.base_res)
        cond = ConditioningContext(gen_pose, [], inst.text, factor=f, cfg=cond_cfg)
        z_init = _noise_latent(gen_rng, den.view_h, den.view_w, codec.channels)
        try:
            z0 = joint_denoise(z_init, plan, [gen_view], cond, den)
        except BackendError as exc:
            raise BackendError(f"instance {inst.id} generation failed: {exc}") from exc
        img = codec.decode(z0)
        mask = bundle.segment(img, (0, 0, scene.base_res, scene.base_res))
        mb = _bbox_of_mask(mask) or gen_bbox
        crop_img = ImageBuffer(img.data[mb.y : mb.y1, mb.x : mb.x1])
        crop_mask = ImageBuffer(mask.data[mb.y : mb.y1, mb.x : mb.x1])
        placed_img = lanczos_resize(crop_img, inst.bbox.w, inst.bbox.h)
        placed_mask = _nearest_resize_mask(crop_mask, inst.bbox.h, inst.bbox.w)
        layers[inst.id] = (placed_img, placed_mask)

    # Background at the padded canvas grid, conditioned on the background text.
    ph, pw = _valid_dims(scene.canvas_h, scene.canvas_w, f, stride)
    hz, wz = ph // f, pw // f
    bg_views = default_views(hz, wz, stride)
    bg_pose = ImageBuffer.full(ph, pw, (0, 0, 0))
    bg_cond = ConditioningContext(bg_pose, [], scene.background_text or scene.global_text, factor=f, cfg=cond_cfg)
    z_init = _noise_latent(rng, hz, wz, codec.channels)
    z0 = joint_denoise(z_init, make_step_plan(bundle.schedule.t_train, steps), bg_views, bg_cond, bundle.denoiser)
    bg = codec.decode(z0)
    bg = ImageBuffer(bg.data[: scene.canvas_h, : scene.canvas_w])

    # Instance-aware background: inpaint behind the (dilated) instance regions.
    canvas_masks: dict[int, ImageBuffer] = {}
    hole = np.zeros((scene.canvas_h, scene.canvas_w), dtype=bool)
    for inst in scene.instances:
        placed_img, placed_mask = layers[inst.id]
        full = np.zeros((scene.canvas_h, scene.canvas_w, 1), dtype=np.uint8)
        full[inst.bbox.y : inst.bbox.y1, inst.bbox.x : inst.bbox.x1] = placed_mask.data
        canvas_masks[inst.id] = ImageBuffer(full, copy=False)
        hole |= full[:, :, 0] > 0
    if hole.any():
        hole = ndimage.binary_dilation(hole, structure=np.ones((3, 3), bool), iterations=4)
        bg = bundle.inpaint(bg, hole)

    # Composite in ascending id order (higher ids occlude), then normalize tone.
    collage = np.array(bg.data, copy=True)
    for inst in sorted(scene.instances, key=lambda i: i.id):
        placed_img, placed_mask = layers[inst.id]
        region = collage[inst.bbox.y : inst.bbox.y1, inst.bbox.x : inst.bbox.x1]
        sel = placed_mask.data[:, :, 0] > 0
        region[sel] = placed_img.data[sel]
    collage_img = tone_normalize(ImageBuffer(collage, copy=False), clahe_params or ClaheParams())

    updated = tuple(
        replace(
            inst,
            image_mask=canvas_masks[inst.id],
            mask=_latent_mask_at(canvas_masks[inst.id], ph, pw, f),
            parts=_update_parts(inst.parts, scene.canvas_h, scene.canvas_w, ph, pw, f),
        )
        for inst in sorted(scene.instances, key=lambda i: i.id)
    )
    return BaseResult(image=collage_img, instances=updated, pose_map=pose_map, background=bg)


def enlarge_stage(
    img: ImageBuffer,
    instances: tuple[InstanceSpec, ...],
    pose_map: ImageBuffer,
    global_text: str,
    cfg: StageConfig,
    bundle: BackendBundle,
    rng: Rng,
    stage_index: int = 1,
    cond_cfg: ConditioningConfig | None = None,
) -> StageResult:
    """One enlargement step: probability map, adaptive perturbation,
    forward diffusion to t_b, adaptive joint denoising, decode."""
    codec = bundle.codec
    f = codec.factor
    cond_cfg = cond_cfg or ConditioningConfig()
    out_h, out_w = upsampled_dims(img.height, img.width, cfg.alpha_interp)

    pmap = build_probability_map(img, cfg.perturb)
    up_clean = lanczos_resize(img, out_w, out_h)
    perturbed, replaced = perturb_with_trace(img, pmap, cfg.perturb, rng, upsampled=up_clean)

    ph, pw = _valid_dims(out_h, out_w, f, cfg.stride)
    hz, wz = ph // f, pw // f
    if bundle.prepare_stage is not None:
        bundle.prepare_stage(stage_index, _pad_image(up_clean, ph, pw), bundle)

    z_tb = hf_forward_diffuse(_pad_image(perturbed, ph, pw), codec, bundle.schedule, cfg.t_b, rng)

    upd = []
    for inst in sorted(instances, key=lambda i: i.id):
        if inst.image_mask is None:
            raise ConfigError(f"instance {inst.id} has no pixel mask; run generate_base first")
        up_mask = _nearest_resize_mask(inst.image_mask, out_h, out_w)
        upd.append(
            replace(
                inst,
                image_mask=up_mask,
                mask=_latent_mask_at(up_mask, ph, pw, f),
                parts=_update_parts(inst.parts, out_h, out_w, ph, pw, f),
            )
        )
    upd = tuple(upd)

    pose_up = lanczos_resize(pose_map, out_w, out_h)
    pose_padded = _pad_image(pose_up, ph, pw, mode="constant")
    views, _ = adaptive_views(hz, wz, cfg.stride, [i.mask for i in upd])

    if cfg.t_b > 0:
        cond = ConditioningContext(pose_padded, list(upd), global_text, factor=f, cfg=cond_cfg)
        plan = make_step_plan(cfg.t_b, cfg.steps)
        z0 = joint_denoise(z_tb, plan, views, cond, bundle.denoiser)
    else:
        z0 = z_tb
    decoded = codec.decode(z0)
    out = ImageBuffer(decoded.data[:out_h, :out_w])
    if cfg.tone_normalize_after:
        out = tone_normalize(out)
    return StageResult(
        image=out,
        instances=upd,
        pose_map=pose_up,
        prob_map=pmap,
        views=views,
        replaced_fraction=float(replaced.mean()),
    )


def run(
    scene: SceneSpec,
    stage_configs: list[StageConfig],
    bundle: BackendBundle,
    seed: int = 0,
    out_dir: str | Path | None = None,
    clahe_params: ClaheParams | None = None,
    cond_cfg: ConditioningConfig | None = None,
    base_steps: int = 50,
) -> RunResult:
    """generate_base, then fold enlarge_stage over the stage configs.

    Stage k uses seed XOR k. With an out_dir, every intermediate artifact
    is written and hashed into manifest.json.
    """
    base = generate_base(
        scene, bundle, Rng(seed), steps=base_steps, clahe_params=clahe_params, cond_cfg=cond_cfg
    )
    stages: list[StageResult] = []
    img, instances, pose = base.image, base.instances, base.pose_map
    for k, cfg in enumerate(stage_configs, start=1):
        try:
            st = enlarge_stage(
                img, instances, pose, scene.global_text, cfg, bundle, Rng(seed ^ k), stage_index=k, cond_cfg=cond_cfg
            )
        except (ConfigError, BackendError) as exc:
            raise type(exc)(f"stage {k}: {exc}") from exc
        except Exception as exc:
            raise PipelineError(f"stage {k}: {exc}") from exc
        stages.append(st)
        img, instances, pose = st.image, st.instances, st.pose_map

    manifest = None
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        manifest = _write_bundle(out_path, seed, base, stages, img)
    return RunResult(final_image=img, base=base, stages=stages, manifest=manifest, out_dir=out_path)


def _prob_map_image(pmap) -> ImageBuffer:
    scale = 255.0 / pmap.p_max if pmap.p_max > 0 else 0.0
    return ImageBuffer(np.clip(np.floor(pmap.values * scale + 0.5), 0, 255).astype(np.uint8)[:, :, None], copy=False)


def _write_bundle(out_dir: Path, seed: int, base: BaseResult, stages: list[StageResult], final: ImageBuffer) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, ImageBuffer] = {
        "base.png": base.image,
        "pose_map.png": base.pose_map,
        "background.png": base.background,
        "final.png": final,
    }
    for inst in base.instances:
        if inst.image_mask is not None:
            files[f"masks/instance_{inst.id:02d}.png"] = ImageBuffer(inst.image_mask.data * 255, copy=False)
    texts: dict[str, str] = {}
    for k, st in enumerate(stages, start=1):
        files[f"stage_{k:02d}/output.png"] = st.image
        files[f"stage_{k:02d}/probability_map.png"] = _prob_map_image(st.prob_map)
        texts[f"stage_{k:02d}/views.json"] = json.dumps(
            {
                "count": len(st.views),
                "replaced_fraction": st.replaced_fraction,
                "views": [[v.h1, v.h2, v.w1, v.w2] for v in st.views],
            },
            sort_keys=True,
            indent=1,
        )
    for rel, img in files.items():
        save_png(img, out_dir / rel)
    for rel, text in texts.items():
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    artifacts = {rel: sha256_file(out_dir / rel) for rel in sorted(list(files) + list(texts))}
    manifest = {"format_version": 1, "seed": seed, "artifacts": artifacts}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return manifest


@dataclass(frozen=True)
class FlopsModel:
    """Abstract per-call costs; totals are views * steps * view_step_cost
    plus the codec costs once per stage."""

    view_step_cost: float = 1.0
    encode_cost: float = 0.0
    decode_cost: float = 0.0

    def __post_init__(self):
        if self.view_step_cost < 0 or self.encode_cost < 0 or self.decode_cost < 0:
            raise ConfigError("costs must be non-negative")


@dataclass(frozen=True)
class StageCost:
    views: int
    steps: int
    cost: float


@dataclass(frozen=True)
class FlopsReport:
    policies: dict[str, tuple[StageCost, ...]]

    def total(self, policy: str) -> float:
        return sum(s.cost for s in self.policies[policy])

    def format_text(self) -> str:
        lines = []
        ref = self.total("fixed_back")
        for name in ("fixed_back", "adaptive", "fixed_inst"):
            total = self.total(name)
            per_stage = ", ".join(f"{s.views}v x {s.steps}s" for s in self.policies[name])
            rel = f" ({total / ref:.2f}x fixed_back)" if ref > 0 else ""
            lines.append(f"{name:>10}: {total:.1f} units{rel}  [{per_stage}]")
        return "\n".join(lines)


def estimate_flops(
    stage_configs: list[StageConfig],
    stage_dims: list[tuple[int, int]],
    masks_per_stage: list[list[LatentMask]],
    model: FlopsModel,
) -> FlopsReport:
    """Compare total cost under three stride policies: everything at the
    instance stride, everything at the background stride, and adaptive."""
    if not len(stage_configs) == len(stage_dims) == len(masks_per_stage):
        raise ConfigError("stage configs, dims and masks must align")
    policies: dict[str, list[StageCost]] = {"fixed_inst": [], "fixed_back": [], "adaptive": []}
    for cfg, (hz, wz), masks in zip(stage_configs, stage_dims, masks_per_stage):
        steps = len(make_step_plan(cfg.t_b, cfg.steps).timesteps) if cfg.t_b > 0 else 0
        sp = cfg.stride
        counts = {
            "fixed_back": len(default_views(hz, wz, replace(sp, s_inst=sp.s_back))),
            "fixed_inst": len(default_views(hz, wz, replace(sp, s_back=sp.s_inst))),
            "adaptive": adaptive_views(hz, wz, sp, masks)[1],
        }
        for name, n in counts.items():
            cost = n * steps * model.view_step_cost + model.encode_cost + model.decode_cost
            policies[name].append(StageCost(views=n, steps=steps, cost=cost))
    return FlopsReport(policies={k: tuple(v) for k, v in policies.items()})


def stage_latent_dims(scene: SceneSpec, stage_configs: list[StageConfig], factor: int) -> list[tuple[int, int]]:
    """Padded latent grid dims for each enlargement stage."""
    h, w = scene.canvas_h, scene.canvas_w
    dims = []
    for cfg in stage_configs:
        oh, ow = upsampled_dims(h, w, cfg.alpha_interp)
        ph, pw = _valid_dims(oh, ow, factor, cfg.stride)
        dims.append((ph // factor, pw // factor))
        h, w = oh, ow
    return dims


def stage_mask_preview(scene: SceneSpec, stage_configs: list[StageConfig], factor: int) -> list[list[LatentMask]]:
    """Per-stage latent instance masks derived from placements alone
    (bbox indicators unless a pixel mask is already attached); lets the
    cost estimator run without generating anything."""
    per_stage: list[list[LatentMask]] = []
    h, w = scene.canvas_h, scene.canvas_w
    base_masks = []
    for inst in scene.instances:
        if inst.image_mask is not None:
            base_masks.append(inst.image_mask)
        else:
            m = np.zeros((scene.canvas_h, scene.canvas_w, 1), dtype=np.uint8)
            m[inst.bbox.y : inst.bbox.y1, inst.bbox.x : inst.bbox.x1] = 1
            base_masks.append(ImageBuffer(m, copy=False))
    for cfg in stage_configs:
        oh, ow = upsampled_dims(h, w, cfg.alpha_interp)
        ph, pw = _valid_dims(oh, ow, factor, cfg.stride)
        stage_masks = [
            _latent_mask_at(_nearest_resize_mask(m, oh, ow), ph, pw, factor) for m in base_masks
        ]
        per_stage.append(stage_masks)
        h, w = oh, ow
    return per_stage


def _stride_from_dict(raw: dict, defaults: StrideParams) -> StrideParams:
    return StrideParams(
        view_h=int(raw.get("view_h", defaults.view_h)),
        view_w=int(raw.get("view_w", defaults.view_w)),
        s_back=int(raw.get("s_back", defaults.s_back)),
        s_inst=int(raw.get("s_inst", defaults.s_inst)),
        beta_over=float(raw.get("beta_over", defaults.beta_over)),
    )


def _perturb_from_dict(raw: dict, defaults: PerturbParams) -> PerturbParams:
    return PerturbParams(
        d_r=int(raw.get("d_r", defaults.d_r)),
        sigma=float(raw.get("sigma", defaults.sigma)),
        alpha_interp=defaults.alpha_interp,
        p_max=float(raw.get("p_max", defaults.p_max)),
        p_base=float(raw.get("p_base", defaults.p_base)),
        canny_lo=float(raw.get("canny_lo", defaults.canny_lo)),
        canny_hi=float(raw.get("canny_hi", defaults.canny_hi)),
        flip_inequality=bool(raw.get("flip_inequality", defaults.flip_inequality)),
    )


def stage_config_from_dict(raw: dict) -> StageConfig:
    try:
        return StageConfig(
            alpha_interp=float(raw.get("alpha_interp", 2.0)),
            t_b=int(raw.get("t_b", 700)),
            steps=int(raw.get("steps", 50)),
            stride=_stride_from_dict(raw.get("stride", {}), StrideParams()),
            perturb=_perturb_from_dict(raw.get("perturb", {}), PerturbParams()),
            tone_normalize_after=bool(raw.get("tone_normalize_after", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid stage config {raw}: {exc}") from exc


def load_scene(path: str | Path) -> tuple[SceneSpec, list[StageConfig]]:
    """Parse a scene JSON document (schema in the README) into a SceneSpec
    and its stage configs."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scene file {path} is not valid JSON: {exc}") from exc
    try:
        canvas = doc["canvas"]
        if isinstance(canvas, dict):
            cw, ch = int(canvas["width"]), int(canvas["height"])
        else:
            cw, ch = int(canvas[0]), int(canvas[1])
        global_text = str(doc["global_text"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"scene file {path}: missing or invalid canvas/global_text: {exc}") from exc
    instances = load_instances(doc.get("instances", []), base_dir=path.parent, canvas_w=cw, canvas_h=ch)
    scene = SceneSpec(
        canvas_w=cw,
        canvas_h=ch,
        global_text=global_text,
        background_text=str(doc.get("background_text", global_text)),
        instances=tuple(instances),
        base_res=int(doc.get("base_res", 1024)),
    )
    stage_configs = [stage_config_from_dict(s) for s in doc.get("stages", [])]
    return scene, stage_configs
