"""Numeric evaluation of the detection and segmentation training losses.

Nothing here computes gradients; the functions score supplied predictions
so a training implementation can be checked against them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import constants as C
from .dataset import IGNORE, MASK_FOREGROUND, MASK_IGNORE, SegMask

MODALITIES = ("color", "thermal", "merged")
MPN_TERMS = tuple(f"{kind}_{m}" for kind in ("cls", "bbox", "seg") for m in MODALITIES)
MCN_TERMS = tuple(f"{kind}_{m}" for kind in ("cls", "seg") for m in MODALITIES)


def _nll(q):
    # q is the probability given to the true class; clamp only against log(0)
    return -np.log(np.maximum(q, C.PROB_CLAMP))


def cls_loss(probs, labels) -> float:
    """Mean binary cross-entropy over non-ignored entries.

    ``probs`` is ``(N, 2)`` with rows ``(p_background, p_foreground)``;
    ``labels`` uses the anchor label codes.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(probs) != len(labels):
        raise ValueError(f"{len(probs)} probability pairs for {len(labels)} labels")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability pairs must sum to 1")
    keep = labels != IGNORE
    if not np.any(keep):
        return 0.0
    target = (labels[keep] >= 0).astype(np.int64)
    return float(_nll(probs[keep][np.arange(target.size), target]).mean())


def smooth_l1(x) -> np.ndarray:
    ax = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(ax < 1.0, 0.5 * ax * ax, ax - 0.5)


def _delta_array(deltas) -> np.ndarray:
    rows = [d.as_tuple() if hasattr(d, "as_tuple") else d for d in deltas]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def bbox_loss(deltas_pred, deltas_gt, labels) -> float:
    """Smooth-L1 summed over the four deltas, averaged over positives."""
    pred = _delta_array(deltas_pred)
    gt = _delta_array(deltas_gt)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if not (len(pred) == len(gt) == len(labels)):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gt)} targets, "
                         f"{len(labels)} labels")
    pos = labels >= 0
    if not np.any(pos):
        return 0.0
    return float(smooth_l1(pred[pos] - gt[pos]).sum(axis=1).mean())


def seg_loss(pred, gt: SegMask, renormalize: bool = False) -> float:
    """Per-cell cross-entropy of foreground probabilities against a weak mask.

    Ignore cells contribute nothing. The sum is divided by the full grid
    area ``H * W`` unless ``renormalize`` is set, in which case it is divided
    by the number of non-ignored cells.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != gt.labels.shape:
        raise ValueError(f"prediction grid {pred.shape} does not match mask {gt.labels.shape}")
    if np.any((pred < 0) | (pred > 1)) or np.any(~np.isfinite(pred)):
        raise ValueError("foreground probabilities must lie in [0, 1]")
    ce = _nll(np.where(gt.labels == MASK_FOREGROUND, pred, 1.0 - pred))
    ce = np.where(gt.labels == MASK_IGNORE, 0.0, ce)
    if renormalize:
        n = int(np.count_nonzero(gt.labels != MASK_IGNORE))
        return float(ce.sum() / n) if n else 0.0
    return float(ce.sum() / gt.labels.size)


@dataclass(frozen=True)
class LossReport:
    components: Dict[str, float]
    weights: Dict[str, float]
    total: float = field(init=False)

    def __post_init__(self):
        total = 0.0
        for name, value in self.components.items():
            total += self.weights[name] * value
        object.__setattr__(self, "total", total)


def _joint(terms: Sequence[str], components: Mapping[str, float],
           weights: Optional[Mapping[str, float]]) -> LossReport:
    missing = [t for t in terms if t not in components]
    if missing:
        raise ValueError(f"missing loss components: {missing}")
    extra = sorted(set(components) - set(terms))
    if extra:
        raise ValueError(f"unknown loss components: {extra}")
    weights = dict(weights or {})
    bad = sorted(set(weights) - set(terms))
    if bad:
        raise ValueError(f"weights for unknown components: {bad}")
    comps = {}
    for t in terms:
        v = float(components[t])
        if not (np.isfinite(v) and v >= 0):
            raise ValueError(f"component {t} must be finite and >= 0, got {v}")
        comps[t] = v
    return LossReport(comps, {t: float(weights.get(t, C.LOSS_WEIGHT)) for t in terms})


def mpn_loss(components: Mapping[str, float],
             weights: Optional[Mapping[str, float]] = None) -> LossReport:
    """Nine-term proposal-stage loss (cls, bbox, seg for each modality).

    Zeroing the three ``seg_*`` weights gives the configuration without
    segmentation supervision.
    """
    return _joint(MPN_TERMS, components, weights)


def mcn_loss(components: Mapping[str, float],
             weights: Optional[Mapping[str, float]] = None) -> LossReport:
    """Six-term classification-stage loss (cls and seg per modality)."""
    return _joint(MCN_TERMS, components, weights)


def evaluate_record(text: str) -> Dict[str, float]:
    """Evaluate a JSON loss record.

    The record may hold any of::

        {"cls":  {"probs": [[p0, p1], ...], "labels": [...]},
         "bbox": {"pred": [[tx, ty, tw, th], ...], "target": [...], "labels": [...]},
         "seg":  {"pred": [[p, ...], ...], "mask": [[code, ...], ...],
                  "stride": 8, "renormalize": false}}

    where mask codes are 0 background, 1 foreground, 2 ignore.
    """
    doc = json.loads(text)
    out = {}
    if "cls" in doc:
        out["cls"] = cls_loss(doc["cls"]["probs"], doc["cls"]["labels"])
    if "bbox" in doc:
        r = doc["bbox"]
        out["bbox"] = bbox_loss(r["pred"], r["target"], r["labels"])
    if "seg" in doc:
        r = doc["seg"]
        mask = np.asarray(r["mask"], dtype=np.uint8)
        if mask.ndim != 2 or np.any(mask > MASK_IGNORE):
            raise ValueError("seg.mask must be a 2-D grid of codes 0/1/2")
        out["seg"] = seg_loss(r["pred"], SegMask(int(r.get("stride", 8)), mask),
                              bool(r.get("renormalize", False)))
    return out
