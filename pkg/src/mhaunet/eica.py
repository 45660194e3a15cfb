"""Training-free lesion present/absent decision from per-order heatmaps.

Each of the order 1, 2, 4 and 5 maps is reduced to the energy-weighted
centroid of its strongly activated region, and the image is called
positive only when every centroid lands where that order is expected to
respond on a lesion:

    order 1: upper half          (row < 0.5)
    order 2: lower-right quadrant (row >= 0.5, col >= 0.5)
    order 4: upper-right quadrant (row < 0.5, col >= 0.5)
    order 5: left half           (col < 0.5)

Order 3 is not consulted.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

CONDITION_ORDERS = (1, 2, 4, 5)


@dataclass(frozen=True)
class EicaConfig:
    activation_threshold_frac: float = 0.5
    min_energy: float = 0.0

    def __post_init__(self):
        if not 0 < self.activation_threshold_frac < 1:
            raise ConfigError("activation_threshold_frac must lie in (0, 1)")
        if self.min_energy < 0:
            raise ConfigError("min_energy must be non-negative")


@dataclass(frozen=True)
class OrderLocation:
    active: bool
    centroid: Optional[tuple[float, float]]
    energy: float


@dataclass(frozen=True)
class QuadrantReport:
    per_order: dict
    conditions: dict
    decision: int


def minmax(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def localize(order_map: np.ndarray, config: EicaConfig = EicaConfig()) -> OrderLocation:
    m = np.asarray(order_map, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected an (H, W) heatmap, got shape {m.shape}")
    peak = m.max()
    if not peak > 0:
        return OrderLocation(False, None, 0.0)
    region = m >= config.activation_threshold_frac * peak
    weights = np.where(region, m, 0.0)
    energy = float(weights.sum())
    if energy < config.min_energy:
        return OrderLocation(False, None, energy)
    h, w = m.shape
    rows, cols = np.indices(m.shape)
    row = float((weights * rows).sum() / energy) / max(h - 1, 1)
    col = float((weights * cols).sum() / energy) / max(w - 1, 1)
    return OrderLocation(True, (row, col), energy)


def _condition(order: int, loc: OrderLocation) -> bool:
    if not loc.active:
        return False
    row, col = loc.centroid
    if order == 1:
        return row < 0.5
    if order == 2:
        return row >= 0.5 and col >= 0.5
    if order == 4:
        return row < 0.5 and col >= 0.5
    if order == 5:
        return col < 0.5
    raise ValueError(f"order {order} has no condition")


def _order_maps(bundle) -> Mapping[int, np.ndarray]:
    return bundle.order_maps if hasattr(bundle, "order_maps") else bundle


def classify(bundle, config: EicaConfig = EicaConfig()) -> QuadrantReport:
    """Accepts an ExplainabilityBundle or a mapping ``order -> heatmap``."""
    maps = _order_maps(bundle)
    missing = [o for o in CONDITION_ORDERS if o not in maps]
    if missing:
        raise DataError(f"explainability bundle lacks order maps {missing}")
    per_order = {o: localize(minmax(maps[o]), config) for o in CONDITION_ORDERS}
    conditions = {o: _condition(o, per_order[o]) for o in CONDITION_ORDERS}
    return QuadrantReport(per_order, conditions, int(all(conditions.values())))


@dataclass
class ClassificationResult:
    label: str
    rate: float
    reports: list
    names: list

    @property
    def metric_name(self):
        return "PDR" if self.label == "positive" else "NDR"


def batch_classify(bundles: Sequence, labels: str, config: EicaConfig = EicaConfig(),
                   names: Optional[Sequence[str]] = None) -> ClassificationResult:
    """PDR (all-positive set) or NDR (all-negative set), as a percentage."""
    if labels not in ("positive", "negative"):
        raise ConfigError(f"labels must be 'positive' or 'negative', got {labels!r}")
    if not bundles:
        raise DataError("no images to classify")
    reports = [classify(b, config) for b in bundles]
    hits = sum(r.decision == (1 if labels == "positive" else 0) for r in reports)
    names = list(names) if names is not None else [str(i) for i in range(len(reports))]
    return ClassificationResult(labels, 100.0 * hits / len(reports), reports, names)


def calibrate_min_energy(bundles: Sequence, candidates: Sequence[float],
                         activation_threshold_frac: float = 0.5) -> float:
    """Largest candidate floor that still maximizes PDR on all-positive bundles."""
    if not bundles:
        raise DataError("calibration needs at least one positive bundle")
    best, best_rate = None, -1.0
    for value in sorted(candidates):
        cfg = EicaConfig(activation_threshold_frac, value)
        rate = batch_classify(bundles, "positive", cfg).rate
        if rate >= best_rate:
            best, best_rate = value, rate
    return best


def write_report_csv(path, result: ClassificationResult):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "order1_ok", "order2_ok", "order4_ok", "order5_ok", "decision"])
        for name, rep in zip(result.names, result.reports):
            writer.writerow([name, *(int(rep.conditions[o]) for o in CONDITION_ORDERS),
                             rep.decision])
