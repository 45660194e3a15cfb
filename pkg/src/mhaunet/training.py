"""Manifest-driven data loading, BCE+Dice loss, cosine LR and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError, NumericalError, ShapeError
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics
from .network import MHAUNet, save_checkpoint

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
LOG_FIELDS = ("epoch", "loss", "val_dsc", "val_se", "val_sp", "val_acc", "lr")


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    mask: Optional[Path]
    split: str


@dataclass
class DatasetManifest:
    entries: list
    resize_to: tuple[int, int] = (256, 256)
    mask_threshold: int = 128

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"{e.image}: unknown split {e.split!r}")
            if e.split == "train" and e.mask is None:
                raise DataError(f"{e.image}: training entries need a mask")
            other = seen.setdefault(e.image, e.split)
            if other != e.split:
                raise DataError(f"{e.image} appears in both {other} and {e.split} splits")

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def check_paths(self):
        for e in self.entries:
            for p in (e.image, e.mask):
                if p is not None and not p.is_file():
                    raise DataError(f"missing file: {p}")


def read_manifest(path, resize_to=(256, 256), mask_threshold=128,
                  check_exists=True) -> DatasetManifest:
    """Parse ``image<TAB>mask-or-'-'<TAB>split`` lines; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        image, mask, split = (p.strip() for p in parts)
        entries.append(ManifestEntry(
            root / image, None if mask == "-" else root / mask, split))
    manifest = DatasetManifest(entries, tuple(resize_to), mask_threshold)
    if check_exists:
        manifest.check_paths()
    return manifest


def write_manifest(path, entries: Sequence[ManifestEntry]):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("# image\tmask\tsplit\n")
        for e in entries:
            mask = "-" if e.mask is None else str(e.mask)
            fh.write(f"{e.image}\t{mask}\t{e.split}\n")


def _open(path: Path, mode: str) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert(mode)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_image(path, resize_to=(256, 256)) -> np.ndarray:
    """``(3, H, W)`` float32 in [0, 1]."""
    im = _open(Path(path), "RGB").resize(tuple(resize_to)[::-1], Image.BILINEAR)
    return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


def load_mask(path, resize_to=(256, 256), threshold=128) -> np.ndarray:
    """``(1, H, W)`` float32 in {0, 1}."""
    im = _open(Path(path), "L").resize(tuple(resize_to)[::-1], Image.NEAREST)
    return (np.asarray(im) >= threshold).astype(np.float32)[None]


def augment_pair(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                 max_rotation: float = 30.0):
    """Random horizontal/vertical flip and rotation, applied identically to both."""
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    angle = rng.uniform(-max_rotation, max_rotation)
    if max_rotation > 0:
        image = ndimage.rotate(image, angle, axes=(1, 2), reshape=False, order=1, mode="reflect")
        mask = ndimage.rotate(mask, angle, axes=(1, 2), reshape=False, order=0, mode="reflect")
    return np.clip(image, 0.0, 1.0), mask


def load_batch(manifest: DatasetManifest, indices: Sequence[int], augment: bool = False,
               split: str = "train", rng: Optional[np.random.Generator] = None,
               max_rotation: float = 30.0):
    """Images ``(B, 3, H, W)`` and masks ``(B, 1, H, W)`` (``None`` if any mask is absent)."""
    entries = manifest.split(split)
    if augment and rng is None:
        raise ValueError("augmentation needs an explicit random generator")
    images, masks = [], []
    for i in indices:
        if not 0 <= i < len(entries):
            raise IndexError(f"index {i} outside the {split} split ({len(entries)} entries)")
        e = entries[i]
        image = load_image(e.image, manifest.resize_to)
        mask = None
        if e.mask is not None:
            with Image.open(e.image) as a, Image.open(e.mask) as b:
                if a.size != b.size:
                    raise ShapeError(f"{e.image} is {a.size} but its mask {e.mask} is {b.size}")
            mask = load_mask(e.mask, manifest.resize_to, manifest.mask_threshold)
            if augment:
                image, mask = augment_pair(image, mask, rng, max_rotation)
        images.append(np.ascontiguousarray(image))
        masks.append(None if mask is None else np.ascontiguousarray(mask))
    image_t = torch.from_numpy(np.stack(images))
    if any(m is None for m in masks):
        return image_t, None
    return image_t, torch.from_numpy(np.stack(masks))


@dataclass(frozen=True)
class LossWeights:
    bce_weight: float = 0.5
    dice_weight: float = 0.5
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.bce_weight < 0 or self.dice_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.bce_weight == 0 and self.dice_weight == 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.dice_smooth <= 0:
            raise ConfigError("dice_smooth must be positive")


def soft_dice(probs: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """Mean over the batch of ``(2 |p t| + s) / (|p| + |t| + s)``."""
    p = probs.flatten(1)
    t = target.flatten(1)
    score = (2 * (p * t).sum(1) + smooth) / (p.sum(1) + t.sum(1) + smooth)
    return score.mean()


def bce_dice_loss(logits: torch.Tensor, target: torch.Tensor,
                  weights: LossWeights = LossWeights()) -> torch.Tensor:
    if logits.shape != target.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    dice = 1 - soft_dice(torch.sigmoid(logits), target, weights.dice_smooth)
    return weights.bce_weight * bce + weights.dice_weight * dice


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 8
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    augment: bool = True
    max_rotation: float = 30.0
    threshold: float = 0.5
    # stop once validation DSC reaches this value (None: run all epochs)
    early_stop_dsc: Optional[float] = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_min < self.lr_init:
            raise ConfigError(f"need 0 < lr_min < lr_init, got {self.lr_min}, {self.lr_init}")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Cosine annealing from ``lr_init`` at epoch 0 to ``lr_min`` at ``epochs``."""
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    cos = math.cos(math.pi * epoch / config.epochs)
    return config.lr_min + 0.5 * (config.lr_init - config.lr_min) * (1 + cos)


@torch.no_grad()
def evaluate_split(model: MHAUNet, manifest: DatasetManifest, split: str,
                   threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Pooled metrics over a split, in eval mode; per-image rows included."""
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"the {split} split is empty")
    if any(e.mask is None for e in entries):
        raise DataError(f"the {split} split has entries without masks")
    was_training = model.training
    model.eval()
    total = ConfusionCounts()
    rows = []
    try:
        for start in range(0, len(entries), batch_size):
            idx = list(range(start, min(start + batch_size, len(entries))))
            images, masks = load_batch(manifest, idx, split=split)
            pred = torch.sigmoid(model(images)) >= threshold
            for i, j in enumerate(idx):
                counts = confusion(pred[i, 0], masks[i, 0] > 0.5)
                total = total + counts
                rows.append((str(entries[j].image), metrics(counts)))
    finally:
        model.train(was_training)
    return metrics(total, per_image=rows)


@dataclass
class TrainResult:
    best_checkpoint: Optional[Path]
    best_dsc: float
    history: list = field(default_factory=list)


def param_checksum(model) -> float:
    return float(sum(p.detach().double().sum() for p in model.parameters()))


def train(model: MHAUNet, manifest: DatasetManifest, config: TrainConfig, out_dir,
          loss_weights: LossWeights = LossWeights(),
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """AdamW + cosine LR; validates every epoch and keeps the best-DSC checkpoint.

    The ``val`` split selects the checkpoint; without one the training
    images (un-augmented) stand in.
    """
    train_entries = manifest.split("train")
    if not train_entries:
        raise DataError("the train split is empty")
    val_split = "val" if manifest.split("val") else "train"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr_init, betas=config.betas,
                            weight_decay=config.weight_decay)
    best_path = out_dir / "best.pt"
    result = TrainResult(None, -1.0)
    log_path = out_dir / "train_log.csv"
    with log_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for epoch in range(config.epochs):
            lr = lr_at(epoch, config)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            order = rng.permutation(len(train_entries))
            losses = []
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size].tolist()
                images, masks = load_batch(manifest, idx, augment=config.augment, rng=rng,
                                           max_rotation=config.max_rotation)
                loss = bce_dice_loss(model(images), masks, loss_weights)
                if not torch.isfinite(loss):
                    raise NumericalError(f"non-finite loss {loss.item()} at epoch {epoch}, "
                                         f"batch starting {start}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())

            report = evaluate_split(model, manifest, val_split, config.threshold,
                                    config.batch_size)
            row = dict(epoch=epoch, loss=float(np.mean(losses)), val_dsc=report.dsc,
                       val_se=report.se, val_sp=report.sp, val_acc=report.acc, lr=lr)
            writer.writerow(row)
            fh.flush()
            result.history.append(row)
            log.info("epoch %d loss %.4f val_dsc %.4f lr %.2e", epoch, row["loss"],
                     report.dsc, lr)
            if on_epoch is not None:
                on_epoch(row)
            if report.dsc > result.best_dsc:
                result.best_dsc = report.dsc
                save_checkpoint(best_path, model, epoch=epoch, val_dsc=report.dsc)
                result.best_checkpoint = best_path
            if config.early_stop_dsc is not None and report.dsc >= config.early_stop_dsc:
                break
    return result
