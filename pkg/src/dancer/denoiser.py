"""Conditional video U-Net over per-frame latent grids.

Frames are processed as a batch by the spatial layers; every stage ends with
a temporal attention layer that mixes the N frames at each spatial position.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .nncore import (
    Attention,
    Conv2d,
    DimensionError,
    GroupNorm,
    Linear,
    ResBlock,
    count_parameters,
    groups_for,
    silu,
    sinusoidal_embed,
    upsample_nearest,
)


@dataclass(frozen=True)
class DenoiserConfig:
    base: int = 64
    latent_channels: int = 4
    token_dim: int = 256
    time_dim: int = 256
    num_steps: int = 1000


class Stage(nn.Module):
    """Residual block, appearance cross-attention, temporal attention."""

    def __init__(self, cin: int, cout: int, emb_dim: int, token_dim: int):
        super().__init__()
        self.res = ResBlock(cin, cout, emb_dim)
        self.app_attn = Attention(cout, context_dim=token_dim)
        self.temporal = Attention(cout)

    def forward(self, x: Tensor, emb: Tensor, c_app: Tensor, temporal: bool) -> Tensor:
        x = self.res(x, emb)
        n, h, w, c = x.shape
        tokens = self.app_attn(x.reshape(n, h * w, c), c_app)
        x = tokens.reshape(n, h, w, c)
        if temporal:
            per_pixel = x.permute(1, 2, 0, 3).reshape(h * w, n, c)
            x = self.temporal(per_pixel).reshape(h, w, n, c).permute(2, 0, 1, 3)
        return x


class DenoiserModel(nn.Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        c = config.base
        lc = config.latent_channels
        td = config.time_dim
        self.time_mlp1 = Linear(td, td)
        self.time_mlp2 = Linear(td, td)
        self.conv_in = Conv2d(2 * lc, c)
        self.down1 = Stage(c, c, td, config.token_dim)
        self.downsample = Conv2d(c, c, stride=2)
        self.down2 = Stage(c, 2 * c, td, config.token_dim)
        self.mid = Stage(2 * c, 2 * c, td, config.token_dim)
        self.up1 = Stage(4 * c, 2 * c, td, config.token_dim)
        self.upsample = Conv2d(2 * c, 2 * c)
        self.up2 = Stage(3 * c, c, td, config.token_dim)
        self.norm_out = GroupNorm(groups_for(c), c)
        self.conv_out = Conv2d(c, lc, zero=True)
        # learned per-timestep weight on an identity path from the noisy
        # input; zero at init, so a fresh model still predicts zero noise
        self.skip_gate = Linear(td, 1, zero=True)
        self.bypass_temporal = False

    @property
    def dtype(self) -> torch.dtype:
        return self.conv_in.weight.dtype

    def time_embedding(self, t: int | Tensor) -> Tensor:
        e = sinusoidal_embed(t, self.config.time_dim).to(self.dtype)
        return self.time_mlp2(silu(self.time_mlp1(e)))

    def forward(
        self,
        noisy_latents: Tensor,
        ref_latent: Tensor,
        c_app: Tensor,
        c_pose: Tensor,
        t: int | Tensor,
    ) -> Tensor:
        """Predict the noise in ``noisy_latents`` (N, h, w, 4)."""
        lc = self.config.latent_channels
        if noisy_latents.dim() != 4 or noisy_latents.shape[-1] != lc:
            raise DimensionError(f"noisy latents must be (N, h, w, {lc}), got {tuple(noisy_latents.shape)}")
        n, h, w, _ = noisy_latents.shape
        if h % 2 or w % 2:
            raise DimensionError(f"latent grid {h}x{w} must be even")
        if ref_latent.shape != (h, w, lc):
            raise DimensionError(f"reference latent {tuple(ref_latent.shape)} != {(h, w, lc)}")
        if c_pose.shape[0] != n:
            raise DimensionError(f"pose condition has {c_pose.shape[0]} frames, latents have {n}")
        if c_pose.shape[1:] != (h, w, self.config.base):
            raise DimensionError(f"pose grid {tuple(c_pose.shape[1:])} != {(h, w, self.config.base)}")
        t = torch.as_tensor(t)
        if t.dim() != 0 or not 0 <= int(t) < self.config.num_steps:
            raise DimensionError(f"timestep must be a scalar in [0, {self.config.num_steps}), got {t}")

        temporal = not self.bypass_temporal
        emb = self.time_embedding(t).expand(n, -1)
        ctx = c_app.expand(n, *c_app.shape[-2:])
        x = torch.cat([noisy_latents, ref_latent.expand(n, h, w, lc)], dim=-1)
        x = self.conv_in(x) + c_pose

        s1 = self.down1(x, emb, ctx, temporal)
        s2 = self.down2(self.downsample(s1), emb, ctx, temporal)
        m = self.mid(s2, emb, ctx, temporal)
        u = self.up1(torch.cat([m, s2], dim=-1), emb, ctx, temporal)
        u = self.upsample(upsample_nearest(u))
        u = self.up2(torch.cat([u, s1], dim=-1), emb, ctx, temporal)
        gate = self.skip_gate(silu(emb)).view(n, 1, 1, 1)
        return self.conv_out(silu(self.norm_out(u))) + gate * noisy_latents


def forward(model: DenoiserModel, noisy_latents, ref_latent, c_app, c_pose, t) -> Tensor:
    return model(noisy_latents, ref_latent, c_app, c_pose, t)


def count_params(model: nn.Module) -> int:
    return count_parameters(model)
