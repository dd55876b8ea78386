"""Pedestrian anchors: quantile-derived scales, grid tiling, IoU labeling and
box-delta encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import constants as C
from .annot_io import GtObject
from .dataset import IGNORE, NEG
from .geometry import Box, iou_matrix


@dataclass(frozen=True)
class AnchorSpec:
    heights: Tuple[float, ...]
    aspect_ratio: float = C.ANCHOR_ASPECT_RATIO
    stride: int = C.FEATURE_STRIDE

    def __post_init__(self):
        hs = tuple(float(h) for h in self.heights)
        if not hs or any(not (h > 0 and math.isfinite(h)) for h in hs):
            raise ValueError("anchor heights must be positive and finite")
        if any(b < a for a, b in zip(hs, hs[1:])):
            raise ValueError("anchor heights must be non-decreasing")
        if not self.aspect_ratio > 0:
            raise ValueError("aspect ratio must be > 0")
        object.__setattr__(self, "heights", hs)

    def to_record(self) -> dict:
        return {"heights": list(self.heights), "aspect_ratio": self.aspect_ratio,
                "stride": self.stride, "bins": len(self.heights) - 1}


@dataclass(frozen=True)
class BoxDelta:
    tx: float
    ty: float
    tw: float
    th: float

    def as_tuple(self):
        return (self.tx, self.ty, self.tw, self.th)


def quantile_scales(heights: Sequence[float], bins: int = C.ANCHOR_BINS) -> Tuple[float, ...]:
    """The ``bins + 1`` quantiles of ``heights`` at ``0, 1/bins, ..., 1``.

    Linear interpolation between order statistics (Hyndman-Fan type 7), so
    the first and last values are the sample minimum and maximum.
    """
    hs = np.asarray(heights, dtype=np.float64).reshape(-1)
    if hs.size == 0:
        raise ValueError("need at least one height")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if np.any(~np.isfinite(hs)) or np.any(hs <= 0):
        raise ValueError("heights must be positive and finite")
    q = np.quantile(hs, np.linspace(0.0, 1.0, bins + 1), method="linear")
    # interpolation round-off can break monotonicity by an ulp
    q = np.maximum.accumulate(q)
    q[0], q[-1] = hs.min(), hs.max()
    return tuple(float(v) for v in q)


def anchor_spec_from_heights(heights: Sequence[float], bins: int = C.ANCHOR_BINS,
                             aspect_ratio: float = C.ANCHOR_ASPECT_RATIO,
                             stride: int = C.FEATURE_STRIDE) -> AnchorSpec:
    return AnchorSpec(quantile_scales(heights, bins), aspect_ratio, stride)


def generate_anchors(spec: AnchorSpec, feat_w: int, feat_h: int) -> List[Box]:
    """Tile anchors over a ``feat_w x feat_h`` grid.

    Ordering is row-major over cells with height varying fastest. Anchors
    are centered on cell centers and may extend past the image.
    """
    if feat_w < 1 or feat_h < 1:
        raise ValueError("feature grid dimensions must be positive")
    s = spec.stride
    sizes = [(spec.aspect_ratio * h, h) for h in spec.heights]
    out = []
    for j in range(feat_h):
        cy = (j + 0.5) * s
        for i in range(feat_w):
            cx = (i + 0.5) * s
            for w, h in sizes:
                out.append(Box(cx - w / 2, cy - h / 2, w, h))
    return out


def label_anchors(anchors: Sequence[Box], gts: Sequence[GtObject],
                  pos_iou: float = C.ANCHOR_POS_IOU,
                  best_anchor_fallback: bool = False) -> np.ndarray:
    """Label each anchor against ground truth.

    Returns an int array: the index of the matched gt for positives
    (IoU strictly above ``pos_iou`` with a non-ignored gt; ties go to the
    lowest index), ``IGNORE`` when the only overlap above ``pos_iou`` is
    with ignored gts, ``NEG`` otherwise.

    ``best_anchor_fallback`` additionally makes each non-ignored gt's
    highest-IoU anchor(s) positive, as Faster R-CNN does.
    """
    n = len(anchors)
    labels = np.full(n, NEG, dtype=np.int64)
    if n == 0 or not gts:
        return labels
    ious = iou_matrix(anchors, [g.box for g in gts])
    ignored = np.array([g.ignored for g in gts])
    care = np.flatnonzero(~ignored)
    if np.any(ignored):
        best_ignored = ious[:, ignored].max(axis=1)
        labels[best_ignored > pos_iou] = IGNORE
    if care.size:
        sub = ious[:, care]
        best = sub.argmax(axis=1)
        best_iou = sub[np.arange(n), best]
        pos = best_iou > pos_iou
        labels[pos] = care[best[pos]]
        if best_anchor_fallback:
            for k, g in enumerate(care):
                col = sub[:, k]
                top = col.max()
                if top <= 0:
                    continue
                for a in np.flatnonzero(col == top):
                    if labels[a] < 0:
                        labels[a] = g
    return labels


def label_proposals(proposals: Sequence[Box], gts: Sequence[GtObject],
                    pos_iou: float = C.PROPOSAL_POS_IOU) -> np.ndarray:
    """Second-stage labeling: same rule as anchors at the stricter IoU."""
    return label_anchors(proposals, gts, pos_iou)


def encode_delta(anchor: Box, gt: Box) -> BoxDelta:
    ax, ay = anchor.center
    gx, gy = gt.center
    return BoxDelta((gx - ax) / anchor.w, (gy - ay) / anchor.h,
                    math.log(gt.w / anchor.w), math.log(gt.h / anchor.h))


def decode_delta(anchor: Box, d: BoxDelta) -> Box:
    if not all(math.isfinite(v) for v in d.as_tuple()):
        raise ValueError(f"non-finite box delta {d!r}")
    ax, ay = anchor.center
    cx = ax + d.tx * anchor.w
    cy = ay + d.ty * anchor.h
    w = anchor.w * math.exp(d.tw)
    h = anchor.h * math.exp(d.th)
    return Box(cx - w / 2, cy - h / 2, w, h)
