"""Micro VAE mapping 64x64x3 frames to 8x8x4 latents and back."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .nncore import Conv2d, DimensionError, GroupNorm, ResBlock, groups_for, silu, upsample_nearest

log = logging.getLogger(__name__)

IMAGE_SIZE = 64
LATENT_SIZE = 8
LATENT_CHANNELS = 4


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


class CodecModel(nn.Module):
    """Encoder: three stride-2 stages (3->32->64->128) and a 128->8 head giving
    mean and log-variance.  Decoder mirrors it with nearest upsampling.

    ``latent_scale`` rescales posterior means to roughly unit variance for the
    diffusion stage; it is calibrated after training and stored with the
    weights.
    """

    def __init__(self, widths: tuple[int, int, int] = (32, 64, 128), kl_weight: float = 1e-6):
        super().__init__()
        c1, c2, c3 = widths
        self.kl_weight = kl_weight
        self.enc = nn.ModuleList(
            [Conv2d(3, c1, stride=2), Conv2d(c1, c2, stride=2), Conv2d(c2, c3, stride=2)]
        )
        self.enc_mid = ResBlock(c3, c3)
        self.enc_norm = GroupNorm(groups_for(c3), c3)
        self.enc_out = Conv2d(c3, 2 * LATENT_CHANNELS)

        self.dec_in = Conv2d(LATENT_CHANNELS, c3)
        self.dec_mid = ResBlock(c3, c3)
        self.dec_up1 = Conv2d(c3, c2)
        self.dec_res = ResBlock(c2, c2)
        self.dec_up2 = Conv2d(c2, c1)
        self.dec_up3 = Conv2d(c1, c1 // 2)
        self.dec_norm = GroupNorm(groups_for(c1 // 2), c1 // 2)
        self.dec_out = Conv2d(c1 // 2, 3)
        self.register_buffer("latent_scale", torch.ones(()))

    # -- raw posterior ----------------------------------------------------------------
    def posterior(self, images: Tensor) -> tuple[Tensor, Tensor]:
        if images.shape[-3:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise DimensionError(f"codec expects (..., 64, 64, 3) images, got {tuple(images.shape)}")
        h = images * 2.0 - 1.0
        for conv in self.enc:
            h = silu(conv(h))
        h = self.enc_mid(h)
        h = self.enc_out(silu(self.enc_norm(h)))
        mean, logvar = h[..., :LATENT_CHANNELS], h[..., LATENT_CHANNELS:]
        return mean, logvar.clamp(-30.0, 20.0)

    def reconstruct(self, z: Tensor) -> Tensor:
        """Unclamped decoder output from raw (unscaled) latents."""
        if z.shape[-3:] != (LATENT_SIZE, LATENT_SIZE, LATENT_CHANNELS):
            raise DimensionError(f"codec expects (..., 8, 8, 4) latents, got {tuple(z.shape)}")
        h = self.dec_mid(self.dec_in(z))
        h = self.dec_res(silu(self.dec_up1(upsample_nearest(h))))
        h = silu(self.dec_up2(upsample_nearest(h)))
        h = self.dec_up3(upsample_nearest(h))
        out = self.dec_out(silu(self.dec_norm(h)))
        return (out + 1.0) / 2.0

    # -- public contract ----------------------------------------------------------------
    def encode(self, image: Tensor) -> Tensor:
        """Posterior mean, scaled into diffusion units."""
        squeeze = image.dim() == 3
        x = image[None] if squeeze else image
        mean, _ = self.posterior(x)
        z = mean * self.latent_scale
        return z[0] if squeeze else z

    def encode_sample(self, image: Tensor, seed: int) -> Tensor:
        squeeze = image.dim() == 3
        x = image[None] if squeeze else image
        mean, logvar = self.posterior(x)
        g = torch.Generator().manual_seed(seed)
        eps = torch.randn(mean.shape, generator=g, dtype=mean.dtype)
        z = (mean + torch.exp(0.5 * logvar) * eps) * self.latent_scale
        return z[0] if squeeze else z

    def decode(self, latent: Tensor) -> Tensor:
        squeeze = latent.dim() == 3
        z = latent[None] if squeeze else latent
        out = self.reconstruct(z / self.latent_scale).clamp(0.0, 1.0)
        return out[0] if squeeze else out


encode = CodecModel.encode
decode = CodecModel.decode


def kl_divergence(mean: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)) per sample, summed over latent entries."""
    return 0.5 * (mean**2 + logvar.exp() - 1.0 - logvar).flatten(1).sum(1)


def codec_loss(model: CodecModel, images: Tensor, seed: int) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, reconstruction mse, kl) for a batch of images."""
    mean, logvar = model.posterior(images)
    g = torch.Generator().manual_seed(seed)
    eps = torch.randn(mean.shape, generator=g, dtype=mean.dtype)
    z = mean + torch.exp(0.5 * logvar) * eps
    recon = model.reconstruct(z)
    mse = ((recon - images) ** 2).mean()
    kl = kl_divergence(mean, logvar).mean()
    total = mse + model.kl_weight * kl if model.kl_weight else mse
    return total, mse, kl


@dataclass
class CodecLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)


def _augment(batch: Tensor, rng: np.random.Generator) -> Tensor:
    flip = torch.from_numpy(rng.random(len(batch)) < 0.5)
    batch = torch.where(flip[:, None, None, None], batch.flip(2), batch)
    perms = torch.from_numpy(np.stack([rng.permutation(3) for _ in range(len(batch))]))
    return torch.take_along_dim(batch, perms[:, None, None, :], dim=3)


def train_codec(
    model: CodecModel,
    dataset: np.ndarray | Tensor,
    steps: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    start_step: int = 0,
    callback=None,
    augment: bool = True,
) -> CodecLog:
    """Adam on reconstruction MSE + kl_weight * KL over a (M, 64, 64, 3) frame set.

    Batches are drawn from a generator seeded by ``(seed, step)`` so a run can
    be resumed mid-way with identical subsequent batches.  With ``augment``
    each batch gets random horizontal flips and color-channel permutations,
    which keeps the codec from memorizing the palettes of the training
    figures.
    """
    data = torch.as_tensor(np.asarray(dataset), dtype=torch.float32)
    if len(data) == 0:
        raise ValueError("train_codec needs a nonempty dataset")
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=lr)
    history = CodecLog()
    model.train()
    for step in range(start_step, start_step + steps):
        rng = np.random.default_rng([seed, step])
        idx = torch.from_numpy(rng.integers(0, len(data), min(batch_size, len(data))))
        batch = data[idx]
        if augment:
            batch = _augment(batch, rng)
        total, mse, kl = codec_loss(model, batch, seed=int(rng.integers(2**31)))
        if not torch.isfinite(total):
            raise DivergenceError(f"codec loss became {total.item()} at step {step}")
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        history.steps.append(step)
        history.loss.append(total.item())
        history.mse.append(mse.item())
        history.kl.append(kl.item())
        if callback is not None:
            callback(step, history)
    model.eval()
    return history


@torch.no_grad()
def calibrate_scale(model: CodecModel, images: np.ndarray | Tensor, batch: int = 64) -> float:
    """Set ``latent_scale`` so encoded latents have unit standard deviation."""
    data = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    means = torch.cat([model.posterior(data[i : i + batch])[0] for i in range(0, len(data), batch)])
    std = float(means.std())
    model.latent_scale.fill_(1.0 / max(std, 1e-6))
    return 1.0 / max(std, 1e-6)


def psnr_batch(a: Tensor, b: Tensor) -> float:
    mse = float(((a.double() - b.double()) ** 2).mean())
    return math.inf if mse == 0 else 10 * math.log10(1.0 / mse)
