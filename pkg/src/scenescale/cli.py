"""Operator CLI: generate scenes, dump view schedules, perturb images,
and estimate per-policy compute.

Exit codes: 0 success, 1 configuration error, 2 backend error, 3 I/O
error. All subcommands are deterministic under --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backends import check_denoiser_contract
from .core import ImageBuffer, Rng
from .errors import BackendError, ConfigError, PipelineError
from .hf_injection import PerturbParams, build_probability_map, perturb_with_trace
from .pipeline import (
    BackendBundle,
    FlopsModel,
    StageConfig,
    estimate_flops,
    load_scene,
    oracle_bundle,
    run,
    stage_latent_dims,
    stage_mask_preview,
    toy_bundle,
)
from .pngio import load_png, save_png
from .view_scheduler import LatentMask, StrideParams, adaptive_views, coverage_counts

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_IO = 3

ENDPOINT_ENV = "SCENESCALE_ENDPOINT"

# fixed 5-stop ramp for coverage heatmaps (dark blue -> yellow)
_HEAT_STOPS = np.array(
    [(13, 8, 135), (126, 3, 168), (204, 71, 120), (248, 149, 64), (240, 249, 33)], dtype=np.float64
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _heatmap(counts: np.ndarray) -> ImageBuffer:
    peak = max(int(counts.max()), 1)
    v = counts.astype(np.float64) / peak
    pos = v * (len(_HEAT_STOPS) - 1)
    lo = np.clip(np.floor(pos).astype(int), 0, len(_HEAT_STOPS) - 2)
    frac = (pos - lo)[:, :, None]
    rgb = (1.0 - frac) * _HEAT_STOPS[lo] + frac * _HEAT_STOPS[lo + 1]
    return ImageBuffer(np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8), copy=False)


def _stride_from_args(args) -> StrideParams:
    try:
        return StrideParams(
            view_h=args.view,
            view_w=args.view,
            s_back=args.stride_back,
            s_inst=args.stride_inst,
            beta_over=args.beta_over,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    if doc.get("format_version", 1) != 1:
        raise ConfigError(f"config file {path}: unsupported format_version {doc.get('format_version')}")
    return doc


def _make_bundle(args) -> BackendBundle:
    backend = args.backend
    if backend == "toy":
        return toy_bundle()
    if backend == "oracle":
        return oracle_bundle()
    if backend == "remote":
        endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint or ":" not in endpoint:
            raise ConfigError("remote backend needs --endpoint host:port (or SCENESCALE_ENDPOINT)")
        from .pipeline import toy_segment
        from .remote import RemoteBackend

        host, port = endpoint.rsplit(":", 1)
        remote = RemoteBackend(host, int(port))
        check_denoiser_contract(remote, pose_factor=remote.factor)
        from .joint_diffusion import make_schedule

        return BackendBundle(
            schedule=make_schedule(),
            denoiser=remote,
            codec=remote,
            segment=toy_segment,
            inpaint=remote.inpaint,
        )
    raise ConfigError(f"unknown backend {backend!r}")


def _apply_stage_overrides(stages: list[StageConfig], args) -> list[StageConfig]:
    if args.stages:
        try:
            alphas = [float(a) for a in args.stages.split(",") if a]
        except ValueError as exc:
            raise ConfigError(f"--stages must be a comma-separated list of ratios: {exc}") from exc
        stages = [StageConfig(alpha_interp=a) for a in alphas]
    if not stages:
        stages = [StageConfig()]
    out = []
    for cfg in stages:
        stride = cfg.stride
        if args.stride_back is not None or args.stride_inst is not None or args.beta_over is not None:
            stride = StrideParams(
                view_h=stride.view_h,
                view_w=stride.view_w,
                s_back=args.stride_back if args.stride_back is not None else stride.s_back,
                s_inst=args.stride_inst if args.stride_inst is not None else stride.s_inst,
                beta_over=args.beta_over if args.beta_over is not None else stride.beta_over,
            )
        perturb = cfg.perturb
        if args.flip_perturb_inequality:
            perturb = replace(perturb, flip_inequality=True)
        cfg = StageConfig(
            alpha_interp=cfg.alpha_interp,
            t_b=args.tb if args.tb is not None else cfg.t_b,
            steps=args.steps if args.steps is not None else cfg.steps,
            stride=stride,
            perturb=perturb,
            tone_normalize_after=cfg.tone_normalize_after,
        )
        out.append(cfg)
    return out


def cmd_generate(args) -> int:
    conf = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    scene, stages = load_scene(args.scene)
    if conf.get("stages") and not args.stages:
        from .pipeline import stage_config_from_dict

        stages = [stage_config_from_dict(s) for s in conf["stages"]]
    stages = _apply_stage_overrides(stages, args)
    bundle = _make_bundle(args)
    out_dir = args.out or conf.get("out") or "scenescale_out"
    result = run(scene, stages, bundle, seed=seed, out_dir=out_dir)
    print(json.dumps(result.manifest, sort_keys=True, indent=1))
    return EXIT_OK


def cmd_schedule(args) -> int:
    stride = _stride_from_args(args)
    masks = []
    if args.mask:
        m = load_png(args.mask)
        if (m.height, m.width) != (args.latent_h, args.latent_w):
            raise ConfigError(
                f"mask {m.height}x{m.width} does not match latent {args.latent_h}x{args.latent_w}"
            )
        masks.append(LatentMask((m.data[:, :, 0] > 0).astype(np.uint8)))
    try:
        views, count = adaptive_views(args.latent_h, args.latent_w, stride, masks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    counts = coverage_counts(views, args.latent_h, args.latent_w)
    print(f"views: {count}")
    print(f"coverage: min {int(counts.min())}, max {int(counts.max())}")
    for v in views:
        print(f"{v.h1} {v.h2} {v.w1} {v.w2}")
    if args.out:
        out_dir = Path(args.out)
        save_png(_heatmap(counts), out_dir / "coverage_heatmap.png")
    return EXIT_OK


def cmd_perturb(args) -> int:
    img = load_png(args.image)
    try:
        params = PerturbParams(
            d_r=args.dr,
            sigma=args.sigma,
            alpha_interp=args.alpha,
            p_max=args.p_max,
            p_base=args.p_base,
            canny_lo=args.canny_lo,
            canny_hi=args.canny_hi,
            flip_inequality=args.flip_perturb_inequality,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pmap = build_probability_map(img, params)
    rng = Rng(args.seed or 0)
    perturbed, replaced = perturb_with_trace(img, pmap, params, rng)
    out_dir = Path(args.out or ".")
    scale = 255.0 / params.p_max if params.p_max > 0 else 0.0
    pm_img = ImageBuffer(
        np.clip(np.floor(pmap.values * scale + 0.5), 0, 255).astype(np.uint8)[:, :, None], copy=False
    )
    save_png(perturbed, out_dir / "perturbed.png")
    save_png(pm_img, out_dir / "probability_map.png")
    print(f"replaced fraction: {replaced.mean():.4f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    scene, stages = load_scene(args.scene)
    stages = _apply_stage_overrides(stages, args)
    model = FlopsModel(
        view_step_cost=args.view_step_cost, encode_cost=args.codec_cost, decode_cost=args.codec_cost
    )
    factor = 8
    dims = stage_latent_dims(scene, stages, factor)
    masks = stage_mask_preview(scene, stages, factor)
    report = estimate_flops(stages, dims, masks, model)
    print(report.format_text())
    return EXIT_OK


def _add_stride_flags(p, with_defaults: bool) -> None:
    p.add_argument("--view", type=int, default=128, help="latent view size")
    p.add_argument("--stride-back", type=int, default=64 if with_defaults else None, help="background stride")
    p.add_argument("--stride-inst", type=int, default=32 if with_defaults else None, help="instance stride")
    p.add_argument("--beta-over", type=float, default=0.2 if with_defaults else None, help="overlap threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenescale", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the full pipeline on a scene file")
    g.add_argument("scene", help="scene JSON path")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", default=None, help="artifact bundle directory")
    g.add_argument("--backend", choices=("toy", "oracle", "remote"), default="toy")
    g.add_argument("--endpoint", default=None, help="host:port of a remote backend")
    g.add_argument("--config", default=None, help="static config JSON; flags win")
    g.add_argument("--stages", default=None, help="comma-separated enlargement ratios, e.g. 2,2")
    g.add_argument("--tb", type=int, default=None, help="forward-diffusion timestep per stage")
    g.add_argument("--steps", type=int, default=None, help="denoise steps per stage")
    g.add_argument("--flip-perturb-inequality", action="store_true")
    _add_stride_flags(g, with_defaults=False)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("schedule", help="dump the view schedule and coverage heatmap")
    s.add_argument("--latent-h", type=int, default=512)
    s.add_argument("--latent-w", type=int, default=512)
    s.add_argument("--mask", default=None, help="latent-grid mask PNG (nonzero = instance)")
    s.add_argument("--out", default=None, help="directory for coverage_heatmap.png")
    _add_stride_flags(s, with_defaults=True)
    s.set_defaults(func=cmd_schedule)

    p = sub.add_parser("perturb", help="probability map + adaptive pixel perturbation")
    p.add_argument("image", help="input PNG")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--dr", type=int, default=4)
    p.add_argument("--sigma", type=float, default=50.0)
    p.add_argument("--p-max", type=float, default=0.1)
    p.add_argument("--p-base", type=float, default=0.005)
    p.add_argument("--canny-lo", type=float, default=100.0)
    p.add_argument("--canny-hi", type=float, default=200.0)
    p.add_argument("--flip-perturb-inequality", action="store_true")
    p.set_defaults(func=cmd_perturb)

    f = sub.add_parser("flops", help="per-policy compute estimate for a scene")
    f.add_argument("scene", help="scene JSON path")
    f.add_argument("--stages", default=None)
    f.add_argument("--tb", type=int, default=None)
    f.add_argument("--steps", type=int, default=None)
    f.add_argument("--view-step-cost", type=float, default=1.0)
    f.add_argument("--codec-cost", type=float, default=0.0)
    f.add_argument("--flip-perturb-inequality", action="store_true")
    _add_stride_flags(f, with_defaults=False)
    f.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, PipelineError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
