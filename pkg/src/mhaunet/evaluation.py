"""Checkpoint evaluation over a manifest split and explainability export."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image
from scipy import ndimage

from .errors import DataError
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics
from .network import MHAUNet, load_checkpoint, predict
from .training import DatasetManifest, evaluate_split, load_image

HEATMAP_CMAP = "jet"
PRED_COLOR = (0, 0, 255)
GT_COLOR = (255, 0, 0)


def evaluate_masks(preds, gts, names=None) -> MetricsReport:
    """Pooled metrics for paired binary masks."""
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    names = names or [str(i) for i in range(len(preds))]
    total = ConfusionCounts()
    rows = []
    for name, p, g in zip(names, preds, gts):
        counts = confusion(p, g)
        total = total + counts
        rows.append((name, metrics(counts)))
    return metrics(total, per_image=rows)


def evaluate(checkpoint, manifest: DatasetManifest, split: str = "test",
             threshold: float = 0.5) -> MetricsReport:
    model, _ = load_checkpoint(checkpoint)
    return evaluate_split(model, manifest, split, threshold)


def per_image_means(report: MetricsReport) -> dict:
    """Per-image averages; undefined (nan) entries are left out."""
    out = {}
    for key in ("dsc", "acc", "se", "sp"):
        vals = [getattr(m, key) for _, m in report.per_image or []]
        vals = [v for v in vals if not math.isnan(v)]
        out[key] = float(np.mean(vals)) if vals else math.nan
    return out


def write_per_image_csv(path, report: MetricsReport):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "dsc", "se", "sp", "acc", "tp", "tn", "fp", "fn"])
        for name, m in report.per_image or []:
            c = m.counts
            writer.writerow([name, m.dsc, m.se, m.sp, m.acc, c.tp, c.tn, c.fp, c.fn])


def render_heatmap(m: np.ndarray) -> np.ndarray:
    """[0, 1] map -> uint8 RGB with the fixed colormap."""
    m = np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)
    rgba = colormaps[HEATMAP_CMAP](m)
    return (rgba[..., :3] * 255).round().astype(np.uint8)


def contour(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask) > 0.5
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def render_overlay(image: np.ndarray, pred_mask: np.ndarray, gt_mask=None) -> np.ndarray:
    """``image`` is ``(3, H, W)`` in [0, 1]; prediction contour blue, ground truth red."""
    rgb = (np.clip(image.transpose(1, 2, 0), 0, 1) * 255).round().astype(np.uint8)
    if gt_mask is not None:
        rgb[contour(gt_mask)] = GT_COLOR
    rgb[contour(pred_mask)] = PRED_COLOR
    return rgb


def _save_png(array: np.ndarray, path: Path):
    try:
        Image.fromarray(array).save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def explain_export(model: MHAUNet, image_path, out_dir, gt_mask=None) -> list:
    """Writes ``order{k}.png`` per interaction order and ``overlay.png``; returns the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    image = load_image(image_path, model.config.input_size)
    _, _, bundles = predict(model, torch.from_numpy(image)[None])
    bundle = bundles[0]
    if not bundle.order_maps:
        raise DataError("the final decoder block exposes no per-order activations")
    written = []
    for order, m in sorted(bundle.order_maps.items()):
        path = out_dir / f"order{order}.png"
        _save_png(render_heatmap(m), path)
        written.append(path)
    path = out_dir / "overlay.png"
    _save_png(render_overlay(image, bundle.mask, gt_mask), path)
    written.append(path)
    return written


def predict_export(model: MHAUNet, image_path, out_dir) -> list:
    """Writes ``mask.png`` (0/255) and ``probs.png`` (8-bit probability)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image = load_image(image_path, model.config.input_size)
    _, _, bundles = predict(model, torch.from_numpy(image)[None])
    b = bundles[0]
    paths = [out_dir / "mask.png", out_dir / "probs.png"]
    _save_png((b.mask * 255).astype(np.uint8), paths[0])
    _save_png((b.probs * 255).round().astype(np.uint8), paths[1])
    return paths
