"""Noise schedule machinery and the overlap-averaged joint denoise loop.

Each timestep denoises every view independently through the backend,
accumulates the per-view outputs into a float64 canvas, and divides by
the per-cell coverage count. Merging runs in coordinate-sorted view
order, so the result is bit-identical under any permutation of the view
list (and under any parallel execution of the per-view calls).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LatentTensor, Rng
from .errors import BackendError
from .view_scheduler import ViewRect, coverage_counts

__all__ = ["NoiseSchedule", "StepPlan", "make_schedule", "make_step_plan", "forward_diffuse", "joint_denoise"]

BETA_MIN = 0.00085
BETA_MAX = 0.012


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta table and cumulative signal fractions.

    Arrays are indexed by timestep: betas[0] is an unused sentinel,
    alpha_bars[0] == 1 (the no-noise endpoint), and
    alpha_bars[t] == prod_{s<=t} (1 - betas[s]).
    """

    t_train: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.t_train < 1:
            raise ValueError("schedule needs at least one training step")
        if self.betas.shape != (self.t_train + 1,) or self.alpha_bars.shape != (self.t_train + 1,):
            raise ValueError("schedule tables must have length t_train + 1")
        b = self.betas[1:]
        if not ((b > 0).all() and (b < 1).all()):
            raise ValueError("betas must lie in (0, 1)")
        if self.t_train > 1 and not (np.diff(b) > 0).all():
            raise ValueError("betas must be strictly increasing")
        ab = self.alpha_bars
        if ab[0] != 1.0 or not ((ab[1:] > 0).all() and (ab[1:] < 1).all() and (np.diff(ab) < 0).all()):
            raise ValueError("alpha_bars must decrease strictly from 1 within (0, 1)")

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.t_train:
            raise ValueError(f"timestep {t} outside [0, {self.t_train}]")
        return float(self.alpha_bars[t])

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.t_train:
            raise ValueError(f"timestep {t} outside [1, {self.t_train}]")
        return float(self.betas[t])


def make_schedule(kind: str = "scaled_linear", t_train: int = 1000) -> NoiseSchedule:
    """Variance schedule with betas interpolated linearly in sqrt space."""
    if kind != "scaled_linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if t_train < 1:
        raise ValueError("t_train must be >= 1")
    t = np.arange(1, t_train + 1, dtype=np.float64)
    frac = (t - 1.0) / (t_train - 1.0) if t_train > 1 else np.zeros(1)
    sqrt_b = np.sqrt(BETA_MIN) + frac * (np.sqrt(BETA_MAX) - np.sqrt(BETA_MIN))
    betas = np.concatenate([[0.0], sqrt_b * sqrt_b])
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas[1:])])
    return NoiseSchedule(t_train=t_train, betas=betas, alpha_bars=alpha_bars)


@dataclass(frozen=True)
class StepPlan:
    """Strictly decreasing denoise timesteps; the last step lands on 0."""

    timesteps: tuple[int, ...]
    kind: str = "deterministic"

    def __post_init__(self):
        if not self.timesteps:
            raise ValueError("step plan must contain at least one timestep")
        ts = self.timesteps
        if ts[-1] < 1 or any(later >= earlier for earlier, later in zip(ts, ts[1:])):
            raise ValueError("timesteps must be strictly decreasing and >= 1")
        if self.kind not in ("deterministic", "ancestral"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    def pairs(self) -> list[tuple[int, int]]:
        """(t, t_next) transitions, ending at t_next == 0."""
        nxt = list(self.timesteps[1:]) + [0]
        return list(zip(self.timesteps, nxt))


def make_step_plan(t_start: int, n_steps: int = 50, kind: str = "deterministic") -> StepPlan:
    """Up to n_steps timesteps spaced uniformly over [1, t_start]."""
    if t_start < 1:
        raise ValueError("t_start must be >= 1")
    n = min(n_steps, t_start)
    ts = np.unique(np.round(np.linspace(t_start, 1, n)).astype(int))[::-1]
    return StepPlan(timesteps=tuple(int(t) for t in ts), kind=kind)


def forward_diffuse(z0: LatentTensor, t: int, schedule: NoiseSchedule, rng: Rng) -> LatentTensor:
    """Noise a clean latent to timestep t:
    z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.

    t == 0 is the no-noise endpoint and consumes no draws.
    """
    if not 0 <= t <= schedule.t_train:
        raise ValueError(f"timestep {t} outside [0, {schedule.t_train}]")
    if t == 0:
        return z0
    ab = schedule.alpha_bar(t)
    eps = rng.standard_normals(z0.data.size).reshape(z0.data.shape)
    out = np.sqrt(ab) * z0.data.astype(np.float64) + np.sqrt(1.0 - ab) * eps
    return LatentTensor(out.astype(np.float32), copy=False)


def _ancestral_sigma(schedule: NoiseSchedule, t: int, t_next: int) -> float:
    ab_t = schedule.alpha_bar(t)
    ab_n = schedule.alpha_bar(t_next)
    var = (1.0 - ab_n) / (1.0 - ab_t) * (1.0 - ab_t / ab_n)
    return float(np.sqrt(max(var, 0.0)))


def joint_denoise(
    z_start: LatentTensor,
    plan: StepPlan,
    views: list[ViewRect],
    cond,
    backend,
    rng: Rng | None = None,
    schedule: NoiseSchedule | None = None,
) -> LatentTensor:
    """Iterate the denoise loop from the plan's first timestep down to 0.

    cond must provide inputs_for(view, z) -> (latent crop, pose crop, text).
    The backend's step(x, pose, text, t, t_next, view) returns the view's
    latent at t_next. An ancestral plan adds shared per-step noise drawn
    from rng after averaging (sigma from the schedule).
    """
    h_z, w_z, c_z = z_start.data.shape
    counts = coverage_counts(views, h_z, w_z)
    if (counts == 0).any():
        raise ValueError("view schedule leaves latent cells uncovered; averaging would divide by zero")
    if plan.kind == "ancestral" and (rng is None or schedule is None):
        raise ValueError("ancestral sampling needs an rng and a schedule")

    merge_order = sorted(range(len(views)), key=lambda i: views[i])
    div = counts[:, :, np.newaxis].astype(np.float64)
    z = z_start.data

    for t, t_next in plan.pairs():
        outputs: list[np.ndarray | None] = [None] * len(views)
        for i, view in enumerate(views):
            x, pose, text = cond.inputs_for(view, z)
            try:
                y = backend.step(x, pose, text, t, t_next, view)
            except Exception as exc:
                raise BackendError(f"backend step failed at t={t}, view={view}: {exc}") from exc
            y = np.asarray(y)
            if y.shape != x.shape:
                raise BackendError(
                    f"backend returned shape {y.shape} for input {x.shape} at t={t}, view={view}"
                )
            outputs[i] = y

        accum = np.zeros((h_z, w_z, c_z), dtype=np.float64)
        for i in merge_order:
            view = views[i]
            hs, ws = view.slices()
            accum[hs, ws] += outputs[i].astype(np.float64)
        z_next = (accum / div).astype(np.float32)
        if not np.isfinite(z_next).all():
            raise BackendError(f"non-finite latent after averaging at t={t}")
        if plan.kind == "ancestral" and t_next > 0:
            sigma = _ancestral_sigma(schedule, t, t_next)
            noise = rng.standard_normals(z_next.size).reshape(z_next.shape)
            z_next = (z_next.astype(np.float64) + sigma * noise).astype(np.float32)
        z = z_next

    return LatentTensor(z, copy=False)
