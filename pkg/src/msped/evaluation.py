"""Miss-rate evaluation under the KAIST/Caltech reasonable protocol.

Detections are matched per frame greedily by descending score. Ground
truth outside the reasonable subset acts as an ignore region: detections
landing on it are neither true nor false positives. Sweeping the score
threshold gives a (FPPI, miss rate) curve, summarized by the log-average
miss rate over a log-spaced FPPI range.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import constants as C
from .annot_io import Detection, FormatError, FrameAnnotations, format_number
from .dataset import ReasonableConfig, reasonable_filter
from .geometry import iou_matrix

TP, FP, IGNORED = "tp", "fp", "ignored"
MATCHED, MISSED = "matched", "missed"
CURVE_HEADER = "threshold,fppi,miss_rate"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    match_iou: float = C.MATCH_IOU
    fppi_lo: float = C.FPPI_RANGE[0]
    fppi_hi: float = C.FPPI_RANGE[1]
    n_points: int = C.FPPI_POINTS
    reasonable: ReasonableConfig = field(default_factory=ReasonableConfig)

    def __post_init__(self):
        if not 0 < self.match_iou < 1:
            raise ValueError("match_iou must be in (0, 1)")
        if not 0 < self.fppi_lo < self.fppi_hi:
            raise ValueError("need 0 < fppi_lo < fppi_hi")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")

    def reference_fppi(self) -> np.ndarray:
        return np.logspace(math.log10(self.fppi_lo), math.log10(self.fppi_hi), self.n_points)


@dataclass(frozen=True)
class FrameMatch:
    """Outcome of matching one frame; det lists follow the input order."""

    frame_id: str
    scores: Tuple[float, ...]
    det_status: Tuple[str, ...]
    det_gt: Tuple[Optional[int], ...]
    gt_status: Tuple[str, ...]

    @property
    def n_eval_gt(self) -> int:
        return sum(s != IGNORED for s in self.gt_status)

    def counts(self) -> Dict[str, int]:
        out = {k: 0 for k in (TP, FP, IGNORED)}
        for s in self.det_status:
            out[s] += 1
        out[MATCHED] = self.gt_status.count(MATCHED)
        out[MISSED] = self.gt_status.count(MISSED)
        return out


@dataclass(frozen=True)
class EvalCurve:
    """Points ``(threshold, fppi, miss_rate)`` by descending threshold."""

    points: Tuple[Tuple[float, float, float], ...]
    frame_count: int

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def fppi(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def miss_rate(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def miss_at(self, fppi: float) -> float:
        """Miss rate at the largest achieved FPPI not exceeding ``fppi`` (1 if none)."""
        miss = 1.0
        for _, f, m in self.points:
            if f > fppi:
                break
            miss = m
        return miss


def ranked_order(scores: Sequence[float]) -> List[int]:
    """Descending score; equal scores keep input order."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def match_frame(dets: Sequence[Detection], frame: FrameAnnotations,
                cfg: EvalConfig = EvalConfig()) -> FrameMatch:
    """Match one frame's detections against its ground truth.

    Each detection, highest score first, takes the unmatched evaluated gt
    with the highest IoU at or above ``cfg.match_iou`` (ties to the lowest
    gt index). Failing that, overlapping an ignored gt at the same
    threshold makes it ``ignored``; ignored gts absorb any number of
    detections. Everything else is a false positive.
    """
    for d in dets:
        if d.frame_id != frame.frame_id:
            raise ValueError(f"detection for frame {d.frame_id!r} passed with frame {frame.frame_id!r}")
    gts = frame.objects
    evaluate = np.array([reasonable_filter(g, frame, cfg.reasonable) == "evaluate" for g in gts],
                        dtype=bool)
    ious = iou_matrix([d.box for d in dets], [g.box for g in gts])
    taken = np.zeros(len(gts), dtype=bool)
    det_status: List[str] = [FP] * len(dets)
    det_gt: List[Optional[int]] = [None] * len(dets)
    for i in ranked_order([d.score for d in dets]):
        row = ious[i]
        open_eval = evaluate & ~taken & (row >= cfg.match_iou)
        if open_eval.any():
            cand = np.flatnonzero(open_eval)
            j = int(cand[np.argmax(row[cand])])
            taken[j] = True
            det_status[i], det_gt[i] = TP, j
        elif np.any(~evaluate & (row >= cfg.match_iou)):
            cand = np.flatnonzero(~evaluate & (row >= cfg.match_iou))
            det_status[i], det_gt[i] = IGNORED, int(cand[np.argmax(row[cand])])
    gt_status = tuple(IGNORED if not e else (MATCHED if t else MISSED)
                      for e, t in zip(evaluate, taken))
    return FrameMatch(frame.frame_id, tuple(d.score for d in dets), tuple(det_status),
                      tuple(det_gt), gt_status)


def group_detections(frames: Sequence[FrameAnnotations],
                     dets: Iterable[Detection]) -> Dict[str, List[Detection]]:
    """Detections per frame id, in input order; unknown frame ids are an error."""
    groups = {f.frame_id: [] for f in frames}
    for d in dets:
        if d.frame_id not in groups:
            raise EvaluationError(f"detection refers to unknown frame {d.frame_id!r}")
        groups[d.frame_id].append(d)
    return groups


def match_frames(frames: Sequence[FrameAnnotations], dets: Iterable[Detection],
                 cfg: EvalConfig = EvalConfig(), executor=None) -> List[FrameMatch]:
    groups = group_detections(frames, dets)
    mapper = map if executor is None else executor.map
    return list(mapper(lambda f: match_frame(groups[f.frame_id], f, cfg), frames))


def mr_fppi_curve(matches: Sequence[FrameMatch]) -> EvalCurve:
    """Sweep the score threshold over every distinct detection score.

    Greedy matching by descending score means the matching at threshold
    ``t`` is the restriction of the full matching to scores ``>= t``, so one
    pass over the sorted detections yields the whole curve.
    """
    if not matches:
        raise EvaluationError("no frames to evaluate")
    n_frames = len(matches)
    n_gt = sum(m.n_eval_gt for m in matches)
    if n_gt == 0:
        raise EvaluationError("no evaluated ground truth: miss rate undefined")
    events = sorted(((s, st) for m in matches for s, st in zip(m.scores, m.det_status)),
                    key=lambda e: -e[0])
    if not events:
        return EvalCurve(((math.inf, 0.0, 1.0),), n_frames)
    points = []
    tp = fp = 0
    for k, (score, status) in enumerate(events):
        if status == TP:
            tp += 1
        elif status == FP:
            fp += 1
        if k + 1 == len(events) or events[k + 1][0] != score:
            points.append((score, fp / n_frames, (n_gt - tp) / n_gt))
    return EvalCurve(tuple(points), n_frames)


def log_average_mr(curve: EvalCurve, cfg: EvalConfig = EvalConfig()) -> float:
    """Geometric mean of the miss rate sampled at log-spaced FPPI references."""
    misses = [max(curve.miss_at(ref), C.MISS_FLOOR) for ref in cfg.reference_fppi()]
    return math.exp(math.fsum(math.log(m) for m in misses) / len(misses))


def evaluate(frames: Sequence[FrameAnnotations], dets: Iterable[Detection],
             cfg: EvalConfig = EvalConfig(), executor=None) -> Tuple[float, EvalCurve]:
    curve = mr_fppi_curve(match_frames(frames, dets, cfg, executor))
    return log_average_mr(curve, cfg), curve


def select_subset(frames: Sequence[FrameAnnotations], subset: str) -> List[FrameAnnotations]:
    if subset == "all":
        return list(frames)
    if subset not in ("day", "night"):
        raise ValueError(f"subset must be all/day/night, got {subset!r}")
    return [f for f in frames if f.time_of_day == subset]


def subset_eval(frames: Sequence[FrameAnnotations], dets: Iterable[Detection], subset: str = "all",
                cfg: EvalConfig = EvalConfig(), executor=None) -> Tuple[float, EvalCurve]:
    """Evaluate on the all/day/night subset of ``frames``."""
    dets = list(dets)
    group_detections(frames, dets)  # reject detections on unknown frames
    chosen = select_subset(frames, subset)
    if not chosen:
        raise EvaluationError(f"subset {subset!r} contains no frames")
    ids = {f.frame_id for f in chosen}
    return evaluate(chosen, [d for d in dets if d.frame_id in ids], cfg, executor)


def fixed_score_detections(dets: Iterable[Detection], score: float = 1.0) -> List[Detection]:
    """Give every box the same score, e.g. for human-drawn detections."""
    return [Detection(d.frame_id, d.box, score, d.stream_logits) for d in dets]


def export_curve(curve: EvalCurve) -> str:
    lines = [CURVE_HEADER]
    lines += [",".join(format_number(v) if math.isfinite(v) else repr(v) for v in p)
              for p in curve.points]
    return "\n".join(lines) + "\n"


def parse_curve(text: str, frame_count: int = 0) -> EvalCurve:
    """Inverse of :func:`export_curve`; the frame count is not stored in the CSV."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or ",".join(rows[0]) != CURVE_HEADER:
        raise FormatError(f"curve header must be {CURVE_HEADER!r}", line=1)
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, found {len(row)}", line=lineno)
        try:
            points.append(tuple(float(v) for v in row))
        except ValueError:
            raise FormatError("non-numeric field", line=lineno) from None
    return EvalCurve(tuple(points), frame_count)
