"""Synthetic dermoscopy-like images (skin background + dark elliptical lesion).

Only meant for smoke tests and overfitting checks; no claim of realism.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .training import ManifestEntry, write_manifest


def lesion_sample(size=(256, 256), rng=None, lesion=True):
    """Returns ``(rgb uint8 (H, W, 3), mask uint8 (H, W) in {0, 255})``."""
    rng = rng or np.random.default_rng()
    h, w = size
    skin = np.array([224, 172, 150]) + rng.normal(0, 10, 3)
    noise = ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 3) * 25
    img = skin[None, None, :] + noise[..., None]
    mask = np.zeros((h, w), dtype=bool)
    if lesion:
        rows, cols = np.mgrid[0:h, 0:w]
        cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
        ry, rx = rng.uniform(0.15, 0.3) * h, rng.uniform(0.15, 0.3) * w
        theta = rng.uniform(0, np.pi)
        dy, dx = rows - cy, cols - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        wobble = 1 + 0.1 * np.sin(3 * np.arctan2(v, u) + rng.uniform(0, 2 * np.pi))
        mask = (u / rx) ** 2 + (v / ry) ** 2 <= wobble
        color = np.array([110, 70, 55]) + rng.normal(0, 12, 3)
        soft = ndimage.gaussian_filter(mask.astype(float), 1.5)[..., None]
        img = img * (1 - soft) + color[None, None, :] * soft
    img = np.clip(img, 0, 255).astype(np.uint8)
    return img, mask.astype(np.uint8) * 255


def write_dataset(root, splits: dict, size=(256, 256), seed=0, lesion=True):
    """Writes images/masks under ``root`` and a ``manifest.tsv``; ``splits`` maps
    split name to image count. Returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for split, count in splits.items():
        for i in range(count):
            img, mask = lesion_sample(size, rng, lesion)
            name = f"{split}_{i:03d}.png"
            Image.fromarray(img).save(root / "images" / name)
            Image.fromarray(mask).save(root / "masks" / name)
            entries.append(ManifestEntry(Path("images") / name, Path("masks") / name, split))
    path = root / "manifest.tsv"
    write_manifest(path, entries)
    return path
