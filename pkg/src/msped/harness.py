"""Synthetic datasets and detectors with known statistics.

Randomness comes from numpy's PCG64 bit generator. Each frame draws from its
own stream, seeded by ``SeedSequence([seed, frame_index, purpose])``, so a
frame's content does not depend on how many frames are generated or in
which order. Floats are numpy's 53-bit uniform doubles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from . import constants as C
from .annot_io import (PEOPLE, PERSON, PERSON_UNCERTAIN, Dataset, Detection, FrameAnnotations,
                       GtObject, StreamLogits)
from .dataset import reasonable_filter
from .evaluation import EvalConfig
from .geometry import Box, iou_matrix

_DATASET_STREAM = 0
_DETECTOR_STREAM = 1


def frame_rng(seed: int, index: int, purpose: int = _DATASET_STREAM) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, purpose])))


@dataclass(frozen=True)
class DetectorConfig:
    recall: float = 0.8
    fppi_target: float = 0.5
    localization_jitter: float = 0.0  # pixels, std of each box coordinate
    score_noise: float = 1.0  # std of the latent logit
    score_margin: float = 4.0  # TP latent mean minus FP latent mean
    fp_avoid_gt: bool = True  # resample FPs that would match any gt

    def __post_init__(self):
        if not 0 <= self.recall <= 1:
            raise ValueError("recall must be in [0, 1]")
        if self.fppi_target < 0 or self.localization_jitter < 0 or self.score_noise < 0:
            raise ValueError("rates and spreads must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_frames: int = 100
    persons_per_frame: float = 3.0  # Poisson mean
    height_range: Tuple[float, float] = (40.0, 200.0)
    day_fraction: float = 0.5
    image_size: Tuple[int, int] = C.IMAGE_SIZE
    frames_per_video: int = 100
    occlusion_probs: Tuple[float, float, float] = (0.8, 0.15, 0.05)  # none, partial, heavy
    label_probs: Tuple[Tuple[str, float], ...] = ((PERSON, 0.9), (PERSON_UNCERTAIN, 0.05),
                                                  (PEOPLE, 0.05))
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        if self.n_frames < 0 or self.persons_per_frame < 0:
            raise ValueError("counts must be >= 0")
        if not 0 <= self.day_fraction <= 1:
            raise ValueError("day_fraction must be in [0, 1]")
        lo, hi = self.height_range
        if not 0 < lo <= hi <= self.image_size[1]:
            raise ValueError("height_range must satisfy 0 < lo <= hi <= image height")
        for probs in (self.occlusion_probs, [p for _, p in self.label_probs]):
            if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0):
                raise ValueError("probabilities must be >= 0 and sum to 1")


def frame_id_for(index: int, frames_per_video: int = 100) -> str:
    return f"synth/V{index // frames_per_video:03d}/I{index % frames_per_video:05d}"


def is_day(index: int, n_frames: int, day_fraction: float) -> bool:
    """Spread ``round(n_frames * day_fraction)`` day frames evenly."""
    n_day = int(math.floor(n_frames * day_fraction + 0.5))
    return ((index + 1) * n_day) // n_frames > (index * n_day) // n_frames


def synth_frame(cfg: SynthConfig, index: int) -> FrameAnnotations:
    rng = frame_rng(cfg.seed, index)
    img_w, img_h = cfg.image_size
    labels = [lab for lab, _ in cfg.label_probs]
    label_p = [p for _, p in cfg.label_probs]
    objs = []
    for _ in range(int(rng.poisson(cfg.persons_per_frame))):
        h = rng.uniform(*cfg.height_range)
        w = C.ANCHOR_ASPECT_RATIO * h
        x = rng.uniform(0.0, img_w - w)
        y = rng.uniform(0.0, img_h - h)
        label = labels[int(rng.choice(len(labels), p=label_p))]
        occ = ("none", "partial", "heavy")[int(rng.choice(3, p=cfg.occlusion_probs))]
        objs.append(GtObject(label, Box(x, y, w, h), occ))
    tod = "day" if is_day(index, cfg.n_frames, cfg.day_fraction) else "night"
    return FrameAnnotations(frame_id_for(index, cfg.frames_per_video), tuple(objs), tod,
                            cfg.image_size)


def synth_dataset(cfg: SynthConfig, executor=None) -> List[FrameAnnotations]:
    mapper = map if executor is None else executor.map
    return list(mapper(lambda i: synth_frame(cfg, i), range(cfg.n_frames)))


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def synth_logits(score: float, seed: Union[int, np.random.Generator, None] = 0) -> StreamLogits:
    """Random four-stream logits whose fused score equals ``score``.

    Logits are drawn freely, then the merged stream's positive logit is
    shifted so that ``sum(c1) - sum(c0)`` equals ``logit(score)``.
    """
    if not 0.0 < score < 1.0:
        raise ValueError(f"score must lie strictly inside (0, 1), got {score!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    target = math.log(score) - math.log1p(-score)
    raw = rng.normal(0.0, 2.0, size=(4, 2))
    pairs = [[float(c0), float(c1)] for c0, c1 in raw]
    diff = math.fsum(p[1] for p in pairs) - math.fsum(p[0] for p in pairs)
    pairs[3][1] += target - diff
    return StreamLogits(*(tuple(p) for p in pairs))


def _detector_frame(fa: FrameAnnotations, det: DetectorConfig, seed: int, index: int,
                    eval_cfg: EvalConfig, height_range) -> List[Detection]:
    rng = frame_rng(seed, index, _DETECTOR_STREAM)
    img_w, img_h = fa.image_size
    out = []

    def emit(box, latent):
        score = _logistic(float(np.clip(latent, -30.0, 30.0)))
        out.append(Detection(fa.frame_id, box, score, synth_logits(score, rng)))

    for g in fa.objects:
        if reasonable_filter(g, fa, eval_cfg.reasonable) != "evaluate":
            continue
        if rng.uniform() >= det.recall:
            continue
        x, y, w, h = g.box.as_tuple()
        if det.localization_jitter > 0:
            jx, jy, jw, jh = rng.normal(0.0, det.localization_jitter, size=4)
            x, y = x + jx, y + jy
            w, h = max(1.0, w + jw), max(1.0, h + jh)
        emit(Box(x, y, w, h), rng.normal(det.score_margin / 2, det.score_noise))

    gt_boxes = [g.box for g in fa.objects]
    for _ in range(int(rng.poisson(det.fppi_target))):
        for _attempt in range(100):
            h = rng.uniform(*height_range)
            w = C.ANCHOR_ASPECT_RATIO * h
            box = Box(rng.uniform(0.0, img_w - w), rng.uniform(0.0, img_h - h), w, h)
            if not (det.fp_avoid_gt and gt_boxes and
                    iou_matrix([box], gt_boxes).max() >= eval_cfg.match_iou):
                break
        emit(box, rng.normal(-det.score_margin / 2, det.score_noise))
    return out


def synth_detector(frames: Sequence[FrameAnnotations], det: DetectorConfig = DetectorConfig(),
                   seed: int = 0, eval_cfg: EvalConfig = EvalConfig(),
                   height_range: Tuple[float, float] = (40.0, 200.0),
                   executor=None) -> List[Detection]:
    """Simulated detections for ``frames``.

    Every evaluated gt yields a true positive with probability ``recall``;
    each frame gets ``Poisson(fppi_target)`` background false positives.
    Latent logits are normal with means ``+margin/2`` (TP) and ``-margin/2``
    (FP); the score is their logistic and each detection carries stream
    logits that fuse back to it.
    """
    mapper = map if executor is None else executor.map
    per_frame = mapper(lambda t: _detector_frame(t[1], det, seed, t[0], eval_cfg, height_range),
                       enumerate(frames))
    return [d for fr in per_frame for d in fr]


def synth_all(cfg: SynthConfig, executor=None) -> Dataset:
    frames = synth_dataset(cfg, executor)
    dets = synth_detector(frames, cfg.detector, cfg.seed, height_range=cfg.height_range,
                          executor=executor)
    return Dataset(frames, dets)
