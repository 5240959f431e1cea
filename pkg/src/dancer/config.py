"""Run configuration: one JSON document, validated on load.

All defaults live in :class:`Config`; a config file only needs the fields
it changes.

=====================  =========  ==========================================
field                  default    meaning
=====================  =========  ==========================================
image_size             64         frame side length in pixels
latent_size            8          latent grid side (image_size / 8)
latent_channels        4          latent channels
n_frames               8          frames per training window / generation
frames_per_clip        8          clip length for ``synth`` (int or list)
num_clips              8          clips written by ``synth``
jitter                 0.0        keypoint jitter amplitude for ``synth``
T                      1000       diffusion steps
sampling_steps         25         reverse steps at generation time
codec_widths           32,64,128  codec encoder widths
enc_dim                128        appearance encoder width
token_dim              256        appearance token width
pose_dim               64         pose feature / denoiser base width
time_dim               256        timestep embedding width
aem_depth              2          blocks per appearance encoder
lr                     1e-5       diffusion-stage learning rate
codec_lr               2e-3       codec-stage learning rate
batch_size             1          clips per diffusion step
codec_batch            16         frames per codec step
codec_steps            2500       codec-stage steps
diffusion_steps        3000       diffusion-stage steps
ablation_steps         1500       diffusion steps per ablation run
checkpoint_every       500        steps between checkpoints (0 = end only)
seed                   0          training / sampling seed
data_seed              1000       first figure seed for ``synth``
eval_seed              0          metric embedder seed
smoothing_window       1          keypoint smoothing window (odd)
sigma_cond             0.1        reference latent noise
dataset_root           "data"     dataset directory
stage                  "codec"    training stage
=====================  =========  ==========================================
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    image_size: int = 64
    latent_size: int = 8
    latent_channels: int = 4
    n_frames: int = 8
    frames_per_clip: int | list[int] = 8
    num_clips: int = 8
    jitter: float = 0.0
    T: int = 1000
    sampling_steps: int = 25
    codec_widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    enc_dim: int = 128
    token_dim: int = 256
    pose_dim: int = 64
    time_dim: int = 256
    aem_depth: int = 2
    lr: float = 1e-5
    codec_lr: float = 2e-3
    batch_size: int = 1
    codec_batch: int = 16
    codec_steps: int = 2500
    diffusion_steps: int = 3000
    ablation_steps: int = 1500
    checkpoint_every: int = 500
    seed: int = 0
    data_seed: int = 1000
    eval_seed: int = 0
    smoothing_window: int = 1
    sigma_cond: float = 0.1
    dataset_root: str = "data"
    stage: str = "codec"

    def validate(self) -> "Config":
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(self.image_size == 64, f"image_size must be 64, got {self.image_size}")
        need(self.latent_size * 8 == self.image_size, "latent_size must be image_size / 8")
        need(self.latent_channels == 4, "latent_channels must be 4")
        need(len(self.codec_widths) == 3 and all(w > 0 for w in self.codec_widths), "codec_widths needs 3 positive ints")
        need(self.codec_widths[0] % 2 == 0, "codec_widths[0] must be even")
        need(self.n_frames >= 1, "n_frames must be >= 1")
        lengths = self.frames_per_clip if isinstance(self.frames_per_clip, list) else [self.frames_per_clip]
        need(all(isinstance(n, int) and n >= 1 for n in lengths), "frames_per_clip must be positive")
        need(self.num_clips >= 1, "num_clips must be >= 1")
        if isinstance(self.frames_per_clip, list):
            need(len(self.frames_per_clip) == self.num_clips, "frames_per_clip list must have num_clips entries")
        need(self.jitter >= 0, "jitter must be >= 0")
        need(self.T >= 1, "T must be >= 1")
        need(1 <= self.sampling_steps <= self.T, "sampling_steps must be in [1, T]")
        need(self.token_dim > 0 and self.enc_dim > 0 and self.time_dim % 2 == 0, "bad embedding widths")
        need(self.pose_dim % 4 == 0 and self.pose_dim >= 8, "pose_dim must be a multiple of 4, >= 8")
        need(self.lr > 0 and self.codec_lr > 0, "learning rates must be positive")
        need(self.batch_size == 1, "diffusion batch_size must be 1 (one clip per step)")
        need(self.codec_batch >= 1, "codec_batch must be >= 1")
        need(min(self.codec_steps, self.diffusion_steps, self.ablation_steps) >= 0, "step counts must be >= 0")
        need(self.checkpoint_every >= 0, "checkpoint_every must be >= 0")
        need(self.smoothing_window >= 1 and self.smoothing_window % 2 == 1, "smoothing_window must be odd")
        need(self.sigma_cond >= 0, "sigma_cond must be >= 0")
        need(self.stage in ("codec", "diffusion"), f"unknown stage '{self.stage}'")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path | None) -> "Config":
        if path is None:
            return cls().validate()
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def model_kwargs(self) -> dict:
        return dict(
            codec_widths=tuple(self.codec_widths),
            enc_dim=self.enc_dim,
            token_dim=self.token_dim,
            pose_dim=self.pose_dim,
            time_dim=self.time_dim,
            num_steps=self.T,
            aem_depth=self.aem_depth,
        )
