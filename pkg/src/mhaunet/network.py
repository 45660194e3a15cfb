"""MHA-UNet: five-level encoder/decoder with MHAblocks at levels 3-5."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DataError, ShapeError
from .highorder import DEFAULT_ALPHA
from .mha_block import ALL_ORDERS, BranchActivations, MHABlock, SingleOrderBlock, validate_orders

CHECKPOINT_FORMAT = 1
MHA_LEVELS = (3, 4, 5)
DEFAULT_SINGLE_ORDER = 5


@dataclass
class NetworkConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    input_size: tuple[int, int] = (256, 256)
    input_channels: int = 3
    dropout_rate: float = 0.1
    mha_orders: tuple[int, ...] = ALL_ORDERS
    encoder_single_order: Optional[int] = None
    decoder_single_order: Optional[int] = None
    alpha: float = DEFAULT_ALPHA
    bias: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.input_size = tuple(int(s) for s in self.input_size)
        self.mha_orders = validate_orders(self.mha_orders)
        if len(self.channels) != 5:
            raise ConfigError(f"expected 5 levels of channels, got {self.channels}")
        if any(b != 2 * a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"channels must double per level, got {self.channels}")
        if any(s % 16 for s in self.input_size):
            raise ConfigError(f"input size must be divisible by 16, got {self.input_size}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("encoder_single_order", "decoder_single_order"):
            value = getattr(self, name)
            if value is not None:
                validate_orders([value])
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")

    def level_size(self, level: int) -> tuple[int, int]:
        h, w = self.input_size
        return h // 2 ** (level - 1), w // 2 ** (level - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


class ChannelAttention(nn.Module):
    """CAB: global average pool -> bottleneck MLP -> sigmoid channel gate."""

    def __init__(self, channels: int, reduction: int = 4, bias: bool = True):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=bias),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels, bias=bias),
        )

    def forward(self, x):
        gate = torch.sigmoid(self.mlp(x.mean(dim=(2, 3))))
        return x * gate[:, :, None, None]


class SpatialAttention(nn.Module):
    """SAB: channel mean and max -> 7x7 conv -> sigmoid spatial gate."""

    def __init__(self, kernel_size: int = 7, bias: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=bias)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.conv(pooled))


class ConvMixer(nn.Module):
    def __init__(self, channels: int, kernel_size: int = 7, depth: int = 1, bias: bool = True):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.ModuleDict(dict(
                spatial=nn.Sequential(
                    nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2,
                              groups=channels, bias=bias),
                    nn.GELU(),
                    nn.BatchNorm2d(channels),
                ),
                channel=nn.Sequential(
                    nn.Conv2d(channels, channels, 1, bias=bias),
                    nn.GELU(),
                    nn.BatchNorm2d(channels),
                ),
            ))
            for _ in range(depth)
        )

    def forward(self, x):
        for layer in self.layers:
            x = layer["channel"](layer["spatial"](x) + x)
        return x


def _conv_stage(c_in, c_out, bias):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=bias),
        nn.GroupNorm(4, c_out),
        nn.GELU(),
    )


class MHAUNet(nn.Module):
    def __init__(self, config: Optional[NetworkConfig] = None):
        super().__init__()
        self.config = cfg = config or NetworkConfig()
        ch = cfg.channels

        def attention_block(level, single_order):
            c, size = ch[level - 1], cfg.level_size(level)
            if single_order is not None:
                return SingleOrderBlock(c, single_order, size, cfg.alpha, cfg.bias)
            return MHABlock(c, cfg.mha_orders, size, cfg.alpha, cfg.bias)

        c_prev = cfg.input_channels
        self.enc_convs = nn.ModuleList()
        self.enc_blocks = nn.ModuleDict()
        for level, c in enumerate(ch, start=1):
            self.enc_convs.append(_conv_stage(c_prev, c, cfg.bias))
            if level in MHA_LEVELS:
                self.enc_blocks[str(level)] = attention_block(level, cfg.encoder_single_order)
            c_prev = c
        self.dropout = nn.Dropout2d(cfg.dropout_rate)

        self.bottleneck_mixer = ConvMixer(ch[-1], bias=cfg.bias)

        self.dec5_conv = _conv_stage(ch[4], ch[4], cfg.bias)
        self.dec_blocks = nn.ModuleDict(
            {str(level): attention_block(level, cfg.decoder_single_order) for level in MHA_LEVELS})
        self.up_convs = nn.ModuleList(
            nn.Conv2d(ch[level], ch[level - 1], 1, bias=cfg.bias) for level in range(1, 5))
        self.cabs = nn.ModuleList(ChannelAttention(c, bias=cfg.bias) for c in ch[:4])
        self.sabs = nn.ModuleList(SpatialAttention(bias=cfg.bias) for _ in ch[:4])
        self.fuse_convs = nn.ModuleList(_conv_stage(2 * c, c, cfg.bias) for c in ch[:4])
        self.head = nn.Conv2d(ch[0], 1, 1, bias=cfg.bias)

    def _check_input(self, x):
        cfg = self.config
        if x.dim() != 4 or x.shape[1] != cfg.input_channels:
            raise ShapeError(f"expected (B, {cfg.input_channels}, H, W), got {tuple(x.shape)}")
        if any(s % 16 for s in x.shape[-2:]):
            raise ShapeError(f"spatial size must be divisible by 16, got {tuple(x.shape[-2:])}")

    def encode(self, x):
        """Per-level features ``[f1, ..., f5]``; level l is at ``H / 2**(l-1)``."""
        self._check_input(x)
        feats = []
        for level, conv in enumerate(self.enc_convs, start=1):
            if level > 1:
                x = F.max_pool2d(x, 2)
            x = conv(x)
            if str(level) in self.enc_blocks:
                x = self.enc_blocks[str(level)](x)
            if level > 1:
                x = self.dropout(x)
            feats.append(x)
        return feats

    def bottleneck(self, f5):
        return self.bottleneck_mixer(f5)

    def decode(self, feats, return_activations=False):
        """Logits ``(B, 1, H, W)``; optionally the final decoder MHAblock activations."""
        x = self.dec5_conv(feats[4])
        x = self.dropout(self.dec_blocks["5"](x))
        acts = None
        for level in (4, 3, 2, 1):
            i = level - 1
            up = self.up_convs[i](F.interpolate(x, scale_factor=2, mode="bilinear",
                                                align_corners=False))
            skip = self.sabs[i](self.cabs[i](feats[i]))
            x = self.fuse_convs[i](torch.cat([up, skip], dim=1))
            if str(level) in self.dec_blocks:
                x, block_acts = self.dec_blocks[str(level)].forward_with_activations(x)
                if level == min(MHA_LEVELS):
                    acts = block_acts
            if level > 1:
                x = self.dropout(x)
        logits = self.head(x)
        return (logits, acts) if return_activations else logits

    def forward(self, x, return_activations=False):
        feats = self.encode(x)
        feats[4] = self.bottleneck(feats[4])
        return self.decode(feats, return_activations)


@dataclass
class ExplainabilityBundle:
    """Per-image explanation: one [0, 1] heatmap per interaction order plus the prediction."""

    order_maps: dict[int, np.ndarray]
    probs: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.order_maps)


def order_heatmaps(acts: BranchActivations) -> dict[int, torch.Tensor]:
    """Channel-mean of each branch output, min-max normalized per image -> ``(B, H, W)``."""
    maps = {}
    for order, t in acts.per_order.items():
        m = t.mean(dim=1)
        lo = m.amin(dim=(1, 2), keepdim=True)
        hi = m.amax(dim=(1, 2), keepdim=True)
        span = hi - lo
        maps[order] = torch.where(span > 0, (m - lo) / span.clamp_min(1e-12), torch.zeros_like(m))
    return maps


@torch.no_grad()
def predict(model: MHAUNet, images: torch.Tensor, threshold: float = 0.5):
    """Returns ``(mask, probs, bundles)`` with one ExplainabilityBundle per image."""
    was_training = model.training
    model.eval()
    try:
        logits, acts = model(images, return_activations=True)
    finally:
        model.train(was_training)
    probs = torch.sigmoid(logits)
    mask = (probs >= threshold).to(probs.dtype)
    maps = order_heatmaps(acts) if acts is not None else {}
    bundles = [
        ExplainabilityBundle(
            {o: m[i].cpu().numpy() for o, m in maps.items()},
            probs[i, 0].cpu().numpy(),
            mask[i, 0].cpu().numpy(),
        )
        for i in range(images.shape[0])
    ]
    return mask, probs, bundles


def save_checkpoint(path, model: MHAUNet, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT,
        "network_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        **extra,
    }, path)


def load_checkpoint(path, expected_config: Optional[NetworkConfig] = None,
                    map_location="cpu") -> tuple[MHAUNet, dict]:
    path = Path(path)
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {version!r}")
    config = NetworkConfig.from_dict(payload["network_config"])
    if expected_config is not None and expected_config != config:
        raise ConfigError(f"{path}: checkpoint config {config} does not match {expected_config}")
    model = MHAUNet(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
