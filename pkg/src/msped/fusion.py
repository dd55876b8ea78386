"""Proposal post-processing and multi-stream score fusion."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence, Tuple

from . import constants as C
from .annot_io import Detection, StreamLogits
from .geometry import clip, iou, pad


def fuse_scores(sl: StreamLogits, streams: Optional[Iterable[str]] = None) -> float:
    """Softmax over the per-class logit sums of the selected streams.

    ``streams`` restricts the sum (e.g. ``("merged",)`` for an ablation);
    by default every present stream is used. Equivalent to the logistic of
    ``sum(c1) - sum(c0)``.
    """
    present = sl.present()
    if streams is None:
        names = list(present)
    else:
        names = list(streams)
        unknown = [s for s in names if s not in C.STREAMS]
        if unknown:
            raise ValueError(f"unknown streams {unknown}")
        missing = [s for s in names if s not in present]
        if missing:
            raise ValueError(f"streams not present in logits: {missing}")
        if not names:
            raise ValueError("at least one stream must be selected")
    s0 = math.fsum(present[s][0] for s in names)
    s1 = math.fsum(present[s][1] for s in names)
    m = max(s0, s1)
    e0 = math.exp(s0 - m)
    e1 = math.exp(s1 - m)
    return e1 / (e0 + e1)


def rescore(dets: Sequence[Detection], streams: Optional[Iterable[str]] = None) -> List[Detection]:
    """Replace each detection's score by the fused score of its logits."""
    streams = None if streams is None else tuple(streams)
    out = []
    for d in dets:
        if d.stream_logits is None:
            raise ValueError(f"detection on frame {d.frame_id!r} carries no stream logits")
        out.append(replace(d, score=fuse_scores(d.stream_logits, streams)))
    return out


def filter_proposals(dets: Sequence[Detection],
                     threshold: float = C.PROPOSAL_SCORE_THRESHOLD) -> List[Detection]:
    """Keep detections scoring strictly above ``threshold``."""
    return [d for d in dets if d.score > threshold]


def _ranked(dets: Sequence[Detection]) -> List[int]:
    # descending score, earlier position first on ties
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def top_k(dets: Sequence[Detection], k: int = C.TOP_K) -> List[Detection]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return [dets[i] for i in _ranked(dets)[:k]]


def nms(dets: Sequence[Detection], iou_threshold: float = C.DETECTION_NMS_IOU) -> List[Detection]:
    """Greedy non-maximum suppression.

    Survivors are returned in descending score order. Run per frame; boxes
    of different frames are not compared here.
    """
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must be in (0, 1)")
    kept = []
    for i in _ranked(dets):
        b = dets[i].box
        if all(iou(b, k.box) <= iou_threshold for k in kept):
            kept.append(dets[i])
    return kept


def nms_per_frame(dets: Sequence[Detection], iou_threshold: float = C.DETECTION_NMS_IOU) -> List[Detection]:
    """NMS within each frame; frames keep their first-appearance order."""
    groups = {}
    for d in dets:
        groups.setdefault(d.frame_id, []).append(d)
    return [k for g in groups.values() for k in nms(g, iou_threshold)]


def prepare_proposals(proposals: Sequence[Detection], image_size: Tuple[int, int],
                      threshold: float = C.PROPOSAL_SCORE_THRESHOLD,
                      nms_iou: float = C.PROPOSAL_NMS_IOU, k: int = C.TOP_K,
                      pad_factor: float = C.PROPOSAL_PAD_FACTOR) -> List[Tuple[Detection, object]]:
    """Turn one frame's first-stage proposals into second-stage inputs.

    Score filter, NMS, top-K, then context padding. Returns
    ``(proposal, crop)`` pairs where ``crop`` is the padded box clipped to
    the image (``None`` if it falls fully outside).
    """
    kept = top_k(nms(filter_proposals(proposals, threshold), nms_iou), k)
    return [(d, clip(pad(d.box, pad_factor), *image_size)) for d in kept]
