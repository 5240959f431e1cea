"""Differentiable numerical primitives shared by every model in the package.

All spatial tensors are channel-last: images and feature grids are
``(..., H, W, C)``, token sequences are ``(..., L, D)``.  Convolution kernels
are stored as ``(k, k, C_in, C_out)`` and linear weights as ``(D_in, D_out)``.
Autograd is provided by torch; :func:`grad_check` validates it against
central finite differences.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import torch
import torch.nn.functional as F
from torch import Tensor, nn

GN_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when tensor shapes violate a primitive's contract."""


# ---------------------------------------------------------------------------
# functional primitives
# ---------------------------------------------------------------------------


def conv2d(
    input: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: int = 0,
    bias: Tensor | None = None,
) -> Tensor:
    """Cross-correlation of a channel-last grid with a ``(k, k, cin, cout)`` kernel.

    Accepts ``(H, W, C)`` or batched ``(B, H, W, C)`` input.
    """
    if kernel.dim() != 4 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"kernel must be (k, k, cin, cout), got {tuple(kernel.shape)}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise DimensionError(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    squeeze = input.dim() == 3
    x = input.unsqueeze(0) if squeeze else input
    if x.dim() != 4:
        raise DimensionError(f"input must be (H, W, C) or (B, H, W, C), got {tuple(input.shape)}")
    if x.shape[-1] != kernel.shape[2]:
        raise DimensionError(
            f"input channel axis (-1) has {x.shape[-1]} but kernel axis 2 expects {kernel.shape[2]}"
        )
    h, w = x.shape[1], x.shape[2]
    if (h + 2 * padding - k) // stride + 1 < 1 or (w + 2 * padding - k) // stride + 1 < 1:
        raise DimensionError(f"spatial axes (1, 2) of size {(h, w)} too small for kernel {k}")
    out = F.conv2d(
        x.permute(0, 3, 1, 2),
        kernel.permute(3, 2, 0, 1),
        bias=bias,
        stride=stride,
        padding=padding,
    ).permute(0, 2, 3, 1)
    return out[0] if squeeze else out


def linear(input: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis with a ``(din, dout)`` weight."""
    if weight.dim() != 2 or input.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"trailing dim {input.shape[-1]} does not match weight {tuple(weight.shape)}"
        )
    out = input @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"bias shape {tuple(bias.shape)} != ({weight.shape[1]},)")
        out = out + bias
    return out


def softmax(input: Tensor, axis: int = -1) -> Tensor:
    if input.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    shifted = input - input.amax(dim=axis, keepdim=True).detach()
    e = shifted.exp()
    return e / e.sum(dim=axis, keepdim=True)


def silu(input: Tensor) -> Tensor:
    """``x * sigmoid(x)``."""
    return F.silu(input)


def cross_attention(queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V``.

    Leading batch axes broadcast; ``queries`` is ``(..., m, d)``, ``keys``
    ``(..., n, d)`` and ``values`` ``(..., n, dv)``.
    """
    d = queries.shape[-1]
    if d == 0:
        raise DimensionError("attention feature dim must be positive")
    if keys.shape[-2] == 0:
        raise DimensionError("cross_attention needs at least one key")
    if keys.shape[-1] != d or keys.shape[-2] != values.shape[-2]:
        raise DimensionError(
            f"incompatible q/k/v shapes {tuple(queries.shape)}, {tuple(keys.shape)}, {tuple(values.shape)}"
        )
    scores = queries @ keys.transpose(-1, -2) / math.sqrt(d)
    return softmax(scores, axis=-1) @ values


def group_norm(
    input: Tensor,
    groups: int,
    gamma: Tensor | None = None,
    beta: Tensor | None = None,
    eps: float = GN_EPS,
) -> Tensor:
    """Group normalization of a channel-last ``(..., H, W, C)`` grid."""
    c = input.shape[-1]
    if groups < 1 or c % groups:
        raise DimensionError(f"{c} channels not divisible into {groups} groups")
    if input.dim() < 3:
        raise DimensionError(f"group_norm expects (..., H, W, C), got {tuple(input.shape)}")
    lead = input.shape[:-3]
    # pre-centering keeps constant groups exactly zero (the fused kernel's
    # single-pass variance leaves ~1e-5 residue)
    flat = input.reshape(-1, *input.shape[-3:])
    gmean = flat.mean(dim=(1, 2)).reshape(-1, groups, c // groups).mean(-1, keepdim=True)
    input = flat - gmean.expand(-1, groups, c // groups).reshape(-1, 1, 1, c)
    # contiguous NCHW: the channels-last group_norm kernel crashes on small grids
    x = input.permute(0, 3, 1, 2).contiguous()
    w = None if gamma is None else gamma.expand(c)
    b = None if beta is None else beta.expand(c)
    out = F.group_norm(x, groups, w, b, eps).permute(0, 2, 3, 1)
    return out.reshape(*lead, *out.shape[-3:])


def layer_norm(input: Tensor, gamma: Tensor, beta: Tensor, eps: float = GN_EPS) -> Tensor:
    return F.layer_norm(input, input.shape[-1:], gamma, beta, eps)


def sinusoidal_embed(t: int | Tensor, dim: int) -> Tensor:
    """Standard diffusion timestep encoding, interleaved ``[sin, cos, sin, cos, ...]``."""
    if dim % 2:
        raise DimensionError(f"embedding dim must be even, got {dim}")
    t = torch.as_tensor(t, dtype=torch.float64)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t[..., None] * freqs
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).reshape(*t.shape, dim)
    return emb.to(torch.float32)


def upsample_nearest(input: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of a channel-last ``(B, H, W, C)`` grid."""
    return input.repeat_interleave(factor, dim=-3).repeat_interleave(factor, dim=-2)


# ---------------------------------------------------------------------------
# parameterised layers
# ---------------------------------------------------------------------------


def kaiming_uniform_(t: Tensor, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in) if fan_in > 0 else 0.0
    with torch.no_grad():
        return t.uniform_(-bound, bound)


class Conv2d(nn.Module):
    """Channel-last convolution with fan-in scaled uniform init and zero bias."""

    def __init__(
        self, cin: int, cout: int, k: int = 3, stride: int = 1, padding: int | None = None, zero: bool = False
    ):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = nn.Parameter(torch.empty(k, k, cin, cout))
        self.bias = nn.Parameter(torch.zeros(cout))
        if zero:
            nn.init.zeros_(self.weight)
        else:
            kaiming_uniform_(self.weight, k * k * cin)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.stride, self.padding, self.bias)


class Linear(nn.Module):
    def __init__(self, din: int, dout: int, bias: bool = True, zero: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(din, dout))
        self.bias = nn.Parameter(torch.zeros(dout)) if bias else None
        if zero:
            nn.init.zeros_(self.weight)
        else:
            kaiming_uniform_(self.weight, din)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class GroupNorm(nn.Module):
    def __init__(self, groups: int, channels: int):
        super().__init__()
        if channels % groups:
            raise DimensionError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim))
        self.beta = nn.Parameter(torch.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


def groups_for(channels: int, max_groups: int = 8) -> int:
    # at least two channels per group so per-channel shifts survive normalization
    g = max(1, min(max_groups, channels // 2))
    while channels % g:
        g -= 1
    return g


class ResBlock(nn.Module):
    """GroupNorm-SiLU-Conv twice with a skip path; optional additive embedding."""

    def __init__(self, cin: int, cout: int, emb_dim: int | None = None):
        super().__init__()
        self.norm1 = GroupNorm(groups_for(cin), cin)
        self.conv1 = Conv2d(cin, cout)
        self.emb = Linear(emb_dim, cout) if emb_dim else None
        self.norm2 = GroupNorm(groups_for(cout), cout)
        self.conv2 = Conv2d(cout, cout, zero=True)
        self.skip = Conv2d(cin, cout, k=1) if cin != cout else None

    def forward(self, x: Tensor, emb: Tensor | None = None) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        if self.emb is not None and emb is not None:
            h = h + self.emb(silu(emb))[..., None, None, :]
        h = self.conv2(silu(self.norm2(h)))
        return (x if self.skip is None else self.skip(x)) + h


class Attention(nn.Module):
    """Single-head attention with a residual output projection.

    ``context=None`` gives self-attention over the token axis.
    """

    def __init__(self, dim: int, context_dim: int | None = None, zero_out: bool = True):
        super().__init__()
        cdim = context_dim or dim
        self.norm = LayerNorm(dim)
        self.to_q = Linear(dim, dim, bias=False)
        self.to_k = Linear(cdim, dim, bias=False)
        self.to_v = Linear(cdim, dim, bias=False)
        self.to_out = Linear(dim, dim, zero=zero_out)

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        h = self.norm(x)
        ctx = h if context is None else context
        out = cross_attention(self.to_q(h), self.to_k(ctx), self.to_v(ctx))
        return x + self.to_out(out)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def default_epsilon(dtype: torch.dtype) -> float:
    return 1e-6 if dtype == torch.float64 else 1e-3


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | dict[str, Tensor],
    epsilon: float | None = None,
    *,
    num_coords: int = 32,
    seed: int = 0,
    fd_dtype: torch.dtype | None = None,
    atol: float = 1e-6,
) -> float:
    """Compare backpropagated gradients against central finite differences.

    ``f`` is evaluated with no arguments and must read the current values of
    ``params``.  The analytic gradient is taken at the parameters' own dtype.
    When ``fd_dtype`` is given, the finite differences are evaluated with all
    parameters cast to that dtype, so ``f`` has to build its inputs in the
    parameters' dtype.  For each parameter a random subset of ``num_coords``
    coordinates (or all, if fewer) is probed.

    Returns the maximum relative error ``|a - n| / max(|a|, |n|)`` over probed
    coordinates; coordinates where both magnitudes are below ``atol`` count
    as exact matches.
    """
    if isinstance(params, dict):
        params = list(params.values())
    params = list(params)
    native = [p.dtype for p in params]
    fd_dtype = fd_dtype or native[0]
    eps = default_epsilon(fd_dtype) if epsilon is None else epsilon

    for p in params:
        p.grad = None
    value = f()
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"grad_check: non-finite objective {value.item()}")
    grads = torch.autograd.grad(value, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g.detach().contiguous() for p, g in zip(params, grads)]

    gen = torch.Generator().manual_seed(seed)
    originals = [p.data for p in params]
    worst = 0.0
    try:
        for p in params:
            p.data = p.data.to(fd_dtype)
        with torch.no_grad():
            for p, g in zip(params, grads):
                flat = p.data.view(-1)
                n = flat.numel()
                idx = torch.randperm(n, generator=gen)[: min(num_coords, n)]
                for i in idx.tolist():
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    fp = f().item()
                    flat[i] = orig - eps
                    fm = f().item()
                    flat[i] = orig
                    if not (math.isfinite(fp) and math.isfinite(fm)):
                        raise FloatingPointError("grad_check: non-finite objective near the probe point")
                    numeric = (fp - fm) / (2 * eps)
                    analytic = g.view(-1)[i].item()
                    scale = max(abs(analytic), abs(numeric))
                    if scale < atol:
                        continue
                    worst = max(worst, abs(analytic - numeric) / scale)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
    return worst

