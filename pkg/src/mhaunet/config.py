"""Flat ``key = value`` run configuration covering network, training, loss and EICA fields."""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .eica import EicaConfig
from .errors import ConfigError
from .network import NetworkConfig
from .training import LossWeights, TrainConfig

MANIFEST_KEYS = ("resize_to", "mask_threshold")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    eica: EicaConfig = field(default_factory=EicaConfig)
    resize_to: Optional[tuple[int, int]] = None
    mask_threshold: int = 128

    def __post_init__(self):
        if self.resize_to is None:
            self.resize_to = self.network.input_size
        if tuple(self.resize_to) != tuple(self.network.input_size):
            raise ConfigError(f"resize_to {self.resize_to} must equal input_size "
                              f"{self.network.input_size}")


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "loss": LossWeights,
             "eica": EicaConfig}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    owner = {f.name: section for section, cls in _SECTIONS.items() for f in fields(cls)}
    values: dict = {section: {} for section in _SECTIONS}
    top: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        value = _parse_value(raw)
        if key in owner:
            values[owner[key]][key] = value
        elif key in MANIFEST_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        parts = {section: cls(**values[section]) for section, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(**parts, **top)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {getattr(obj, f.name)!r}")
    lines.append(f"resize_to = {tuple(cfg.resize_to)!r}")
    lines.append(f"mask_threshold = {cfg.mask_threshold!r}")
    return "\n".join(lines) + "\n"
