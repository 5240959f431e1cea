"""Noise schedule, reference-conditioned sampling and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from . import checkpoint as ckpt
from .aem import AppearanceModule
from .codec import CodecModel, DivergenceError, _augment, calibrate_scale, codec_loss
from .denoiser import DenoiserConfig, DenoiserModel
from .nncore import DimensionError
from .prm import PoseTowers, maps_to_tensors, smoothed_pose_maps
from .synthdance import ClipSample

log = logging.getLogger(__name__)

STAGES = ("codec", "diffusion")


class SamplingError(FloatingPointError):
    """The reverse chain produced a non-finite latent."""

    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class Schedule:
    """Linear beta schedule with cumulative products in float64."""

    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.T, dtype=np.float64)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T})")
        return t

    def timesteps(self, steps: int) -> np.ndarray:
        """Descending uniform-stride sub-schedule ending at t=0."""
        if not 1 <= steps <= self.T:
            raise ValueError(f"steps must be in [1, {self.T}], got {steps}")
        return np.round(np.linspace(self.T - 1, 0, steps)).astype(np.int64)


def q_sample(schedule: Schedule, k0: Tensor, t: int, noise: Tensor) -> Tensor:
    ab = float(schedule.alpha_bar[schedule.check_t(t)])
    return np.sqrt(ab) * k0 + np.sqrt(1.0 - ab) * noise


@dataclass
class LatentState:
    frames: Tensor  # (N, h, w, c) noisy frame latents
    ref_latent_noised: Tensor  # (h, w, c)
    t: int


def init_latents(k_tgt: Tensor, n: int, sigma_cond: float = 0.1, seed: int = 0, T: int = 1000) -> LatentState:
    """Unit Gaussian frame latents plus a once-noised copy of the reference latent."""
    if n < 1:
        raise ValueError(f"need at least one frame, got {n}")
    if sigma_cond < 0:
        raise ValueError(f"sigma_cond must be >= 0, got {sigma_cond}")
    g = torch.Generator().manual_seed(int(seed))
    frames = torch.randn((n, *k_tgt.shape), generator=g, dtype=k_tgt.dtype)
    ref_noise = torch.randn(k_tgt.shape, generator=g, dtype=k_tgt.dtype)
    ref = k_tgt.clone() if sigma_cond == 0 else k_tgt + sigma_cond * ref_noise
    return LatentState(frames, ref, T)


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------


class DancerModels(nn.Module):
    """Codec, appearance module, pose module and denoiser in one container."""

    def __init__(
        self,
        codec_widths: tuple[int, int, int] = (32, 64, 128),
        enc_dim: int = 128,
        token_dim: int = 256,
        pose_dim: int = 64,
        time_dim: int = 256,
        num_steps: int = 1000,
        kl_weight: float = 1e-6,
        aem_depth: int = 2,
    ):
        super().__init__()
        self.codec = CodecModel(codec_widths, kl_weight=kl_weight)
        self.aem = AppearanceModule(enc_dim, token_dim, depth=aem_depth)
        self.prm = PoseTowers(pose_dim)
        self.denoiser = DenoiserModel(DenoiserConfig(pose_dim, 4, token_dim, time_dim, num_steps))
        self.stages_done: list[str] = []

    def trainable(self, stage: str) -> list[tuple[str, nn.Parameter]]:
        if stage not in STAGES:
            raise ValueError(f"unknown stage '{stage}', expected one of {STAGES}")
        prefixes = ("codec.",) if stage == "codec" else ("aem.", "prm.", "denoiser.")
        return [(n, p) for n, p in self.named_parameters() if n.startswith(prefixes)]

    def freeze_for(self, stage: str) -> list[tuple[str, nn.Parameter]]:
        active = self.trainable(stage)
        names = {n for n, _ in active}
        for n, p in self.named_parameters():
            p.requires_grad_(n in names)
        return active


EpsModel = Callable[[Tensor, Tensor, Tensor, Tensor, int], Tensor]


def _eps_model(models) -> EpsModel:
    return models.denoiser if isinstance(models, DancerModels) else models


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@torch.no_grad()
def sample(
    models: DancerModels | EpsModel,
    c_app: Tensor,
    c_pose: Tensor,
    steps: int = 25,
    seed: int = 0,
    *,
    ref_latent: Tensor,
    sigma_cond: float = 0.1,
    schedule: Schedule | None = None,
    state: LatentState | None = None,
) -> Tensor:
    """Deterministic reverse chain from pure noise to N clean latents.

    The noised reference latent is drawn once and fed to the noise predictor
    at every step alongside the current frame latents.
    """
    schedule = schedule or Schedule()
    eps_model = _eps_model(models)
    n = c_pose.shape[0]
    if state is None:
        state = init_latents(ref_latent, n, sigma_cond, seed, schedule.T)
    if state.frames.shape[0] != n:
        raise DimensionError(f"state has {state.frames.shape[0]} frames, pose condition has {n}")
    ab = schedule.alpha_bar
    ts = schedule.timesteps(steps)
    z = state.frames
    for i, t in enumerate(ts):
        eps = eps_model(z, state.ref_latent_noised, c_app, c_pose, int(t))
        a_t = ab[t]
        a_prev = ab[ts[i + 1]] if i + 1 < len(ts) else 1.0
        z0 = (z - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        z = np.sqrt(a_prev) * z0 + np.sqrt(1.0 - a_prev) * eps
        if not torch.isfinite(z).all():
            raise SamplingError(f"non-finite latent at sampling step {i} (t={int(t)})", i)
    return z


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class ClipTensors:
    """Per-clip inputs prepared once: frame/reference latents and pose maps."""

    frame_latents: Tensor
    ref_latent: Tensor
    reference: Tensor
    poses: dict[str, Tensor]


@torch.no_grad()
def prepare_clip(models: DancerModels, clip: ClipSample, window: int = 1) -> ClipTensors:
    frames = torch.as_tensor(clip.frames, dtype=torch.float32)
    reference = torch.as_tensor(clip.reference, dtype=torch.float32)
    return ClipTensors(
        frame_latents=models.codec.encode(frames),
        ref_latent=models.codec.encode(reference),
        reference=reference,
        poses=maps_to_tensors(smoothed_pose_maps(clip, window)),
    )


def training_loss(
    models: DancerModels,
    clip: ClipSample | ClipTensors,
    seed: int,
    n_frames: int = 8,
    sigma_cond: float = 0.1,
    schedule: Schedule | None = None,
    eps_model: EpsModel | None = None,
) -> Tensor:
    """Noise-prediction MSE on a window of ``n_frames`` consecutive frames.

    The window start, timestep and noise are all drawn from ``seed``.
    """
    schedule = schedule or Schedule()
    data = clip if isinstance(clip, ClipTensors) else prepare_clip(models, clip)
    total = data.frame_latents.shape[0]
    if total < n_frames:
        raise ValueError(f"clip has {total} frames, need at least {n_frames}")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, total - n_frames + 1))
    t = int(rng.integers(0, schedule.T))
    g = torch.Generator().manual_seed(int(rng.integers(2**31)))
    dt = models.denoiser.dtype
    k0 = data.frame_latents[start : start + n_frames].to(dt)
    noise = torch.randn(k0.shape, generator=g).to(dt)
    ref_noise = torch.randn(data.ref_latent.shape, generator=g).to(dt)
    noisy = q_sample(schedule, k0, t, noise)
    ref = data.ref_latent.to(dt) + sigma_cond * ref_noise

    c_app = models.aem(data.reference.to(dt))
    c_pose = models.prm({m: x[start : start + n_frames].to(dt) for m, x in data.poses.items()})
    eps = (eps_model or models.denoiser)(noisy, ref, c_app, c_pose, t)
    loss = ((eps - noise) ** 2).mean()
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite diffusion loss {loss.item()}")
    return loss


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)


def smoothed(losses: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; entry i averages losses[max(0, i-window+1) : i+1]."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def train(
    models: DancerModels,
    dataset: Sequence[ClipSample],
    steps: int,
    lr: float = 1e-5,
    stage: str = "diffusion",
    seed: int = 0,
    *,
    n_frames: int = 8,
    sigma_cond: float = 0.1,
    smoothing_window: int = 1,
    codec_batch: int = 16,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
    resume: str | Path | None = None,
    config: dict | None = None,
    schedule: Schedule | None = None,
) -> TrainLog:
    """Adam over the stage's trainable set; everything else stays frozen.

    Step ``k`` draws its data, timestep and noise from ``(seed, k)``, so a run
    resumed from a checkpoint at step ``k`` repeats the uninterrupted run.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    schedule = schedule or Schedule()
    named = models.freeze_for(stage)
    params = [p for _, p in named]
    opt = torch.optim.Adam(params, lr=lr)
    start = 0
    if resume is not None:
        start = ckpt.load_training_state(resume, models, opt, named, stage)

    if stage == "codec":
        frames = torch.as_tensor(np.concatenate([c.frames for c in dataset]), dtype=torch.float32)
    else:
        models.eval()
        prepared = [prepare_clip(models, c, smoothing_window) for c in dataset]

    history = TrainLog()
    writer = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists() or start == 0
        fh = open(log_path, "w" if start == 0 else "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "loss", "lr", "wall_ms"])
    try:
        for step in range(start, start + steps):
            t0 = time.perf_counter()
            rng = np.random.default_rng([seed, step])
            if stage == "codec":
                idx = torch.from_numpy(rng.integers(0, len(frames), min(codec_batch, len(frames))))
                batch = _augment(frames[idx], rng)
                loss = codec_loss(models.codec, batch, seed=int(rng.integers(2**31)))[0]
                if not torch.isfinite(loss):
                    raise DivergenceError(f"codec loss became {loss.item()} at step {step}")
            else:
                clip = prepared[int(rng.integers(len(prepared)))]
                loss = training_loss(models, clip, int(rng.integers(2**63)), n_frames, sigma_cond, schedule)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            ms = (time.perf_counter() - t0) * 1000.0
            history.steps.append(step)
            history.loss.append(loss.item())
            history.wall_ms.append(ms)
            if writer is not None:
                writer.writerow([step, f"{loss.item():.9g}", f"{lr:g}", f"{ms:.1f}"])
            done = step + 1
            if checkpoint_path and checkpoint_every and done % checkpoint_every == 0:
                ckpt.save_training_state(checkpoint_path, models, opt, named, stage, done, config)
    finally:
        if writer is not None:
            fh.close()
    if stage == "codec":
        calibrate_scale(models.codec, frames)
    if stage not in models.stages_done:
        models.stages_done.append(stage)
    if checkpoint_path:
        ckpt.save_training_state(checkpoint_path, models, opt, named, stage, start + steps, config)
    return history


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@torch.no_grad()
def generate(
    models: DancerModels,
    reference: np.ndarray | Tensor,
    poses,
    steps: int = 25,
    seed: int = 0,
    sigma_cond: float = 0.1,
    window: int = 1,
) -> Tensor:
    """Reference image + pose source -> (N, 64, 64, 3) frames in [0, 1].

    ``poses`` is a ClipSample (pose maps re-rendered with smoothing ``window``)
    or a PoseMaps sequence.
    """
    models.eval()
    ref = torch.as_tensor(np.asarray(reference), dtype=torch.float32)
    maps = smoothed_pose_maps(poses, window) if isinstance(poses, ClipSample) else poses
    k_tgt = models.codec.encode(ref)
    c_app = models.aem(ref)
    c_pose = models.prm(maps_to_tensors(maps))
    latents = sample(models, c_app, c_pose, steps, seed, ref_latent=k_tgt, sigma_cond=sigma_cond)
    return models.codec.decode(latents)
