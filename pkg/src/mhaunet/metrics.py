"""Confusion counts and DSC / ACC / SE / SP.

Counts are pooled (micro-averaged) across images. Undefined ratios follow
fixed conventions: DSC is 1.0 when prediction and ground truth are both
empty; SE and SP are ``nan`` when their denominator is zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricsReport:
    dsc: float
    acc: float
    se: float
    sp: float
    counts: ConfusionCounts
    per_image: Optional[list] = field(default=None)

    def as_dict(self):
        return dict(dsc=self.dsc, acc=self.acc, se=self.se, sp=self.sp, tp=self.counts.tp,
                    tn=self.counts.tn, fp=self.counts.fp, fn=self.counts.fn)


def _as_bool(mask, name):
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    mask = np.asarray(mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError(f"{name} mask is not binary")
        mask = mask.astype(bool)
    return mask


def confusion(pred_mask, gt_mask) -> ConfusionCounts:
    pred = _as_bool(pred_mask, "predicted")
    gt = _as_bool(gt_mask, "ground-truth")
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, pred.size - tp - fp - fn, fp, fn)


def _ratio(num, den):
    return num / den if den else math.nan


def metrics(counts: ConfusionCounts, per_image=None) -> MetricsReport:
    if counts.total == 0:
        raise ValueError("metrics are undefined for zero evaluated units")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    dsc_den = 2 * tp + fp + fn
    dsc = 2 * tp / dsc_den if dsc_den else 1.0
    return MetricsReport(
        dsc=dsc,
        acc=(tp + tn) / counts.total,
        se=_ratio(tp, tp + fn),
        sp=_ratio(tn, tn + fp),
        counts=counts,
        per_image=per_image,
    )
