"""Multiple high-order attention interaction block (MHAblock).

``X = IEAB(x)``, ``x_i = HABlock_i(X)`` for each configured order,
``gate = vote(concat(x_i))`` and ``out = x * gate + x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError
from .highorder import DEFAULT_ALPHA, HABlock, SqueezeAttention

ALL_ORDERS = (1, 2, 3, 4, 5)


@dataclass
class BranchActivations:
    per_order: dict[int, torch.Tensor] = field(default_factory=dict)
    fused_gate: Optional[torch.Tensor] = None

    @property
    def orders(self):
        return sorted(self.per_order)


def validate_orders(orders: Sequence[int]) -> tuple[int, ...]:
    orders = tuple(int(o) for o in orders)
    if not orders:
        raise ConfigError("at least one interaction order is required")
    if len(set(orders)) != len(orders):
        raise ConfigError(f"duplicate interaction orders in {orders}")
    bad = [o for o in orders if o not in ALL_ORDERS]
    if bad:
        raise ConfigError(f"interaction orders must be within 1..5, got {bad}")
    return tuple(sorted(orders))


class IEAB(nn.Module):
    """Inverted external attention block.

    Pointwise expansion, depthwise 3x3, external attention against two
    shared memory units, pointwise compression, residual. The attention
    output gates the expanded features so a zero map stays zero.
    """

    def __init__(self, channels: int, expansion: int = 2, memory_units: int = 64,
                 bias: bool = True):
        super().__init__()
        hidden = expansion * channels
        self.expand = nn.Conv2d(channels, hidden, 1, bias=bias)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden, bias=bias)
        self.mem_key = nn.Conv1d(hidden, memory_units, 1, bias=False)
        self.mem_value = nn.Conv1d(memory_units, hidden, 1, bias=False)
        self.compress = nn.Conv2d(hidden, channels, 1, bias=bias)

    def external_attention(self, h):
        b, c, hh, ww = h.shape
        attn = self.mem_key(h.reshape(b, c, hh * ww))
        attn = F.softmax(attn, dim=-1)
        attn = attn / (1e-9 + attn.sum(dim=1, keepdim=True))
        return self.mem_value(attn).reshape(b, c, hh, ww)

    def forward(self, x):
        h = F.gelu(self.dw(self.expand(x)))
        return x + self.compress(h * self.external_attention(h))


class VoteBlock(nn.Module):
    """Squeeze attention -> 1x1 conv (nC -> C) -> batch norm -> sigmoid."""

    def __init__(self, channels: int, branches: int = 5, bias: bool = True):
        super().__init__()
        self.channels = channels
        self.branches = branches
        width = channels * branches
        self.sa = SqueezeAttention(width, width, bias=bias)
        self.conv = nn.Conv2d(width, channels, 1, bias=bias)
        self.bn = nn.BatchNorm2d(channels)

    def forward(self, concat_out):
        expected = self.channels * self.branches
        if concat_out.dim() != 4 or concat_out.shape[1] != expected:
            raise ShapeError(
                f"vote block expects {self.branches}x{self.channels}={expected} channels, "
                f"got {tuple(concat_out.shape)}")
        return torch.sigmoid(self.bn(self.conv(self.sa(concat_out))))


class MHABlock(nn.Module):
    def __init__(self, channels: int, orders: Sequence[int] = ALL_ORDERS,
                 size: tuple[int, int] = (16, 16), alpha: float = DEFAULT_ALPHA,
                 bias: bool = True):
        super().__init__()
        self.channels = channels
        self.orders = validate_orders(orders)
        self.ieab = IEAB(channels, bias=bias)
        self.branches = nn.ModuleList(
            HABlock(channels, order, size, alpha, bias) for order in self.orders)
        self.vote = VoteBlock(channels, len(self.orders), bias=bias)

    def forward_with_activations(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"MHAblock expects (B, {self.channels}, H, W), got {tuple(x.shape)}")
        shared = self.ieab(x)
        outs = [branch(shared) for branch in self.branches]
        gate = self.vote(torch.cat(outs, dim=1))
        acts = BranchActivations(dict(zip(self.orders, outs)), gate)
        return x * gate + x, acts

    def forward(self, x):
        return self.forward_with_activations(x)[0]


class SingleOrderBlock(nn.Module):
    """Stand-in for an MHAblock that runs one HA-block of a fixed order."""

    def __init__(self, channels: int, order: int = 5, size: tuple[int, int] = (16, 16),
                 alpha: float = DEFAULT_ALPHA, bias: bool = True):
        super().__init__()
        self.channels = channels
        self.orders = validate_orders([order])
        self.block = HABlock(channels, order, size, alpha, bias)

    def forward_with_activations(self, x):
        out = self.block(x)
        return out, BranchActivations({self.orders[0]: out}, None)

    def forward(self, x):
        return self.block(x)
