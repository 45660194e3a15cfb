"""High-order attention interaction (HA) layer and the HA-block built on it.

An HA layer of order ``n`` projects a ``C``-channel map to ``2C`` channels,
splits it into a gating map ``X_0`` and ``n`` filter inputs ``Y_0 .. Y_{n-1}``
whose widths follow ``C_k = C / 2**(n-k-1)``, and then runs ``n`` gating
steps::

    X_1     = Pro_0(X_0 * GLF_0(Y_0)) / alpha
    X_{k+1} = Pro_k(SA_k(X_k) * GLF_k(Y_k)) / alpha      (k >= 1)

followed by an output projection back to ``C`` channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

DEFAULT_ALPHA = 3.0


@dataclass(frozen=True)
class InteractionConfig:
    order: int
    channels: int
    alpha: float = DEFAULT_ALPHA
    spatial_size: tuple[int, int] = (16, 16)

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"interaction order must be >= 1, got {self.order}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")


def channel_schedule(config: InteractionConfig) -> list[int]:
    """Per-order channel widths ``[C_0, ..., C_{n-1}]``; the last entry is ``C``."""
    n, c = config.order, config.channels
    if c % 2 ** (n - 1):
        raise ConfigError(
            f"channel schedule for order n={n}, C={c} is not integral "
            f"(C_0 = {c / 2 ** (n - 1)})"
        )
    return [c // 2 ** (n - k - 1) for k in range(n)]


def _check_channels(x: torch.Tensor, expected: int, where: str):
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeError(f"{where}: expected (B, {expected}, H, W), got {tuple(x.shape)}")


class LayerNorm2d(nn.Module):
    """Layer norm over channels of an NCHW map, applied channels-last."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class GlobalLocalFilter(nn.Module):
    """Channel-split filter: 3x3 conv on one part, learnable frequency mask on the other.

    The two parts are concatenated (local first) and mixed by a 1x1 conv.
    ``complex_weight`` is stored as ``(global_channels, H, W//2 + 1, 2)``
    (real, imag) for the one-sided real 2-D transform of an ``(H, W)`` map.

    With ``strict=False`` an odd channel count is allowed; the global part
    then takes the extra channel.
    """

    def __init__(self, channels: int, size: tuple[int, int], bias: bool = True,
                 strict: bool = True, resize_weights: bool = True):
        super().__init__()
        if strict and channels % 2:
            raise ShapeError(f"global-local filter needs an even channel count, got {channels}")
        self.channels = channels
        self.global_channels = (channels + 1) // 2
        self.local_channels = channels - self.global_channels
        self.size = tuple(size)
        self.resize_weights = resize_weights

        self.local = (nn.Conv2d(self.local_channels, self.local_channels, 3, padding=1, bias=bias)
                      if self.local_channels else None)
        h, w = self.size
        weight = torch.zeros(self.global_channels, h, w // 2 + 1, 2)
        weight[..., 0] = 1.0
        weight += 0.02 * torch.randn_like(weight)
        self.complex_weight = nn.Parameter(weight)
        self.proj = nn.Conv2d(channels, channels, 1, bias=bias)

    def filter_weight(self, height: int, width: int) -> torch.Tensor:
        weight = self.complex_weight
        target = (height, width // 2 + 1)
        if tuple(weight.shape[1:3]) != target:
            if not self.resize_weights:
                raise ShapeError(
                    f"filter weights are defined for {self.size}, got a {height}x{width} map")
            weight = F.interpolate(weight.permute(3, 0, 1, 2), size=target,
                                   mode="bilinear", align_corners=True).permute(1, 2, 3, 0)
        return torch.view_as_complex(weight.contiguous())

    def global_branch(self, y: torch.Tensor) -> torch.Tensor:
        h, w = y.shape[-2:]
        spec = torch.fft.rfft2(y, dim=(-2, -1), norm="ortho")
        spec = spec * self.filter_weight(h, w)
        return torch.fft.irfft2(spec, s=(h, w), dim=(-2, -1), norm="ortho")

    def forward(self, y):
        _check_channels(y, self.channels, "global-local filter")
        local, glob = torch.split(y, [self.local_channels, self.global_channels], dim=1)
        parts = [self.global_branch(glob)]
        if self.local is not None:
            parts.insert(0, self.local(local))
        return self.proj(torch.cat(parts, dim=1))


class SqueezeAttention(nn.Module):
    """``O = att * main(x) + att`` with ``att = sigmoid(up(conv(avgpool(x))))``."""

    def __init__(self, ch_in: int, ch_out: int, bias: bool = True):
        super().__init__()
        self.main = nn.Sequential(
            nn.Conv2d(ch_in, ch_out, 3, padding=1, bias=bias),
            nn.GELU(),
            nn.Conv2d(ch_out, ch_out, 3, padding=1, bias=bias),
            nn.GELU(),
        )
        self.att_conv = nn.Conv2d(ch_in, ch_out, 3, padding=1, bias=bias)

    def attention(self, x):
        y = self.att_conv(F.avg_pool2d(x, 2))
        return torch.sigmoid(F.interpolate(y, scale_factor=2, mode="nearest"))

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ShapeError(f"squeeze attention needs even spatial dims, got {tuple(x.shape[-2:])}")
        att = self.attention(x)
        return att * self.main(x) + att


class HighOrderAttention(nn.Module):
    def __init__(self, channels: int, order: int, size: tuple[int, int] = (16, 16),
                 alpha: float = DEFAULT_ALPHA, bias: bool = True):
        super().__init__()
        self.config = InteractionConfig(order, channels, alpha, tuple(size))
        self.order = order
        self.channels = channels
        self.alpha = alpha
        self.dims = channel_schedule(self.config)

        self.proj_in = nn.Conv2d(channels, 2 * channels, 1, bias=bias)
        self.filters = nn.ModuleList(
            GlobalLocalFilter(d, size, bias=bias, strict=False) for d in self.dims)
        out_dims = self.dims[1:] + [channels]
        self.pws = nn.ModuleList(
            nn.Conv2d(d_in, d_out, 1, bias=bias) for d_in, d_out in zip(self.dims, out_dims))
        # no squeeze attention ahead of the first gating step
        self.sq = nn.ModuleList(SqueezeAttention(d, d, bias=bias) for d in self.dims[1:])
        self.proj_out = nn.Conv2d(channels, channels, 1, bias=bias)

    def project_in(self, x):
        """Returns ``(X_0, [Y_0, ..., Y_{n-1}])``."""
        _check_channels(x, self.channels, f"order-{self.order} input projection")
        parts = torch.split(self.proj_in(x), [self.dims[0]] + self.dims, dim=1)
        return parts[0], list(parts[1:])

    def forward(self, x):
        gate, ys = self.project_in(x)
        for k in range(self.order):
            if k > 0:
                gate = self.sq[k - 1](gate)
            gate = self.pws[k](gate * self.filters[k](ys[k])) / self.alpha
        return self.proj_out(gate)


class HABlock(nn.Module):
    """Transformer-style block with the HA layer in place of self-attention."""

    def __init__(self, channels: int, order: int, size: tuple[int, int] = (16, 16),
                 alpha: float = DEFAULT_ALPHA, bias: bool = True, ffn_ratio: int = 4):
        super().__init__()
        self.order = order
        self.norm1 = LayerNorm2d(channels)
        self.ha = HighOrderAttention(channels, order, size, alpha, bias)
        self.norm2 = LayerNorm2d(channels)
        self.ffn = nn.Sequential(
            nn.Conv2d(channels, ffn_ratio * channels, 1, bias=bias),
            nn.GELU(),
            nn.Conv2d(ffn_ratio * channels, channels, 1, bias=bias),
        )

    def forward(self, x):
        x = x + self.ha(self.norm1(x))
        return x + self.ffn(self.norm2(x))
