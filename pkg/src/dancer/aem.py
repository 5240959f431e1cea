"""Appearance conditioning from the reference image.

Two small ViT-style encoders look at the same image: a coarse one (16 px
patches, pooled to one global token) for high-level semantics and a fine one
(8 px patches, 64 tokens) for low-level detail.  Fully-connected fusion turns
them into the appearance token sequence consumed by the denoiser's
cross-attention.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .nncore import Attention, DimensionError, LayerNorm, Linear, silu

IMAGE_SIZE = 64


def patchify(images: Tensor, patch: int) -> Tensor:
    """(B, H, W, C) -> (B, (H/p)*(W/p), p*p*C), tokens in row-major order."""
    b, h, w, c = images.shape
    g = h // patch
    x = images.reshape(b, g, patch, w // patch, patch, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * (w // patch), patch * patch * c)


class MLPBlock(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim, zero=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.fc2(silu(self.fc1(self.norm(x))))


class ViTEncoder(nn.Module):
    """Patch embedding followed by self-attention blocks.

    Positional embeddings enter at the start of the block stack, so the raw
    patch embeddings are position-free.  Setting ``bypass_blocks`` skips the
    whole stack (test hook).
    """

    def __init__(self, patch: int, dim: int = 128, depth: int = 2):
        super().__init__()
        self.patch = patch
        self.num_tokens = (IMAGE_SIZE // patch) ** 2
        self.embed = Linear(patch * patch * 3, dim)
        self.pos = nn.Parameter(torch.randn(self.num_tokens, dim) * 0.02)
        self.blocks = nn.ModuleList()
        for _ in range(depth):
            self.blocks.append(Attention(dim))
            self.blocks.append(MLPBlock(dim, 2 * dim))
        self.bypass_blocks = False

    def patch_embeddings(self, images: Tensor) -> Tensor:
        if images.shape[-3:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise DimensionError(f"expected (..., 64, 64, 3) image, got {tuple(images.shape)}")
        return self.embed(patchify(images * 2.0 - 1.0, self.patch))

    def forward(self, images: Tensor) -> Tensor:
        x = self.patch_embeddings(images)
        if self.bypass_blocks:
            return x
        x = x + self.pos
        for blk in self.blocks:
            x = blk(x)
        return x


class SemanticEncoder(ViTEncoder):
    """16 px patches -> 16 tokens -> mean-pooled single global token."""

    def __init__(self, dim: int = 128, depth: int = 2):
        super().__init__(16, dim, depth)

    def forward(self, images: Tensor) -> Tensor:
        return super().forward(images).mean(dim=-2, keepdim=True)


class DetailEncoder(ViTEncoder):
    """8 px patches -> 64 spatially ordered tokens, no pooling."""

    def __init__(self, dim: int = 128, depth: int = 2):
        super().__init__(8, dim, depth)


class Fusion(nn.Module):
    """Feature-axis concat of each detail token with the global token, two FC
    layers, plus a separate projection of the global token prepended."""

    def __init__(self, enc_dim: int = 128, token_dim: int = 256):
        super().__init__()
        self.fc1 = Linear(2 * enc_dim, token_dim)
        self.fc2 = Linear(token_dim, token_dim)
        self.global_proj = Linear(enc_dim, token_dim)

    def forward(self, c_h: Tensor, c_l: Tensor) -> Tensor:
        if c_h.shape[-2] != 1 or c_h.shape[-1] != c_l.shape[-1] or c_h.shape[:-2] != c_l.shape[:-2]:
            raise DimensionError(f"fusion got c_h {tuple(c_h.shape)} and c_l {tuple(c_l.shape)}")
        joint = torch.cat([c_l, c_h.expand_as(c_l)], dim=-1)
        fused = self.fc2(silu(self.fc1(joint)))
        return torch.cat([self.global_proj(c_h), fused], dim=-2)


class AppearanceModule(nn.Module):
    """Reference image -> appearance tokens ``(65, token_dim)``.

    ``use_detail=False`` zeros the detail tokens at the fusion input (the
    semantic-encoder-only ablation).
    """

    def __init__(self, enc_dim: int = 128, token_dim: int = 256, depth: int = 2):
        super().__init__()
        self.semantic = SemanticEncoder(enc_dim, depth)
        self.detail = DetailEncoder(enc_dim, depth)
        self.fusion = Fusion(enc_dim, token_dim)
        self.use_detail = True

    @property
    def num_tokens(self) -> int:
        return self.detail.num_tokens + 1

    def forward(self, image: Tensor) -> Tensor:
        squeeze = image.dim() == 3
        x = image[None] if squeeze else image
        c_h = self.semantic(x)
        c_l = self.detail(x)
        if not self.use_detail:
            c_l = torch.zeros_like(c_l)
        out = self.fusion(c_h, c_l)
        return out[0] if squeeze else out


def _batched(fn, image: Tensor) -> Tensor:
    squeeze = image.dim() == 3
    out = fn(image[None] if squeeze else image)
    return out[0] if squeeze else out


def encode_semantic(enc: SemanticEncoder, image: Tensor) -> Tensor:
    return _batched(enc, image)


def encode_detail(enc: DetailEncoder, image: Tensor) -> Tensor:
    return _batched(enc, image)


def fuse(fusion: Fusion, c_h: Tensor, c_l: Tensor) -> Tensor:
    return fusion(c_h, c_l)
