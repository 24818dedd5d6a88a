"""Staged scene composition and tiled-diffusion enlargement around
pluggable denoiser backends."""

from .backends import (
    DenoiserBackend,
    IdentityDenoiser,
    LatentCodec,
    OracleDenoiser,
    ToyCodec,
    ToyDenoiser,
    check_denoiser_contract,
    toy_inpaint,
    toy_segment,
)
from .conditioner import (
    BBox,
    ConditioningConfig,
    ConditioningContext,
    InstanceSpec,
    PartSpec,
    PoseKeypoints,
    downscale_mask,
    render_pose_map,
    view_inputs,
)
from .core import ImageBuffer, LatentTensor, Rng
from .errors import BackendError, ConfigError, PipelineError
from .hf_injection import (
    PerturbParams,
    ProbabilityMap,
    adaptive_pixel_perturb,
    build_probability_map,
    hf_forward_diffuse,
)
from .image_ops import ClaheParams, EdgeMap, canny, clahe, gaussian_blur, lanczos_resize, tone_normalize
from .joint_diffusion import NoiseSchedule, StepPlan, forward_diffuse, joint_denoise, make_schedule, make_step_plan
from .pipeline import (
    BackendBundle,
    FlopsModel,
    FlopsReport,
    SceneSpec,
    StageConfig,
    enlarge_stage,
    estimate_flops,
    generate_base,
    load_scene,
    oracle_bundle,
    run,
    toy_bundle,
)
from .view_scheduler import LatentMask, StrideParams, ViewRect, adaptive_views, coverage_counts, default_views

__version__ = "0.1.0"
