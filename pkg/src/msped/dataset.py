"""Dataset protocols: training-frame selection, the reasonable test filter,
weak segmentation masks and stratified minibatch sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import FrozenSet, List, Sequence

import numpy as np

from . import constants as C
from .annot_io import (PEOPLE, PERSON, PERSON_IGNORE, PERSON_UNCERTAIN,
                       FrameAnnotations, GtObject)
from .geometry import clip

# anchor / proposal label codes; values >= 0 are positives (the matched gt index)
NEG = -1
IGNORE = -2

FOREGROUND_LABELS = (PERSON, PERSON_UNCERTAIN, PEOPLE)

MASK_BACKGROUND = 0
MASK_FOREGROUND = 1
MASK_IGNORE = 2
PGM_LEVELS = {MASK_BACKGROUND: 0, MASK_IGNORE: 128, MASK_FOREGROUND: 255}


@dataclass(frozen=True)
class FilterConfig:
    frame_step: int = C.TRAIN_FRAME_STEP
    min_height: float = C.TRAIN_MIN_HEIGHT
    exclude_occlusion: FrozenSet[str] = frozenset({"heavy"})
    exclude_truncated: bool = True
    truncation_fraction: float = C.TRUNCATION_CLIP_FRACTION

    def __post_init__(self):
        if self.frame_step < 1:
            raise ValueError("frame_step must be >= 1")
        if self.min_height <= 0:
            raise ValueError("min_height must be > 0")


@dataclass(frozen=True)
class ReasonableConfig:
    min_height: float = C.REASONABLE_MIN_HEIGHT
    occlusions: FrozenSet[str] = frozenset({"none", "partial"})
    labels: FrozenSet[str] = frozenset({PERSON})
    # distance from the image border a box must keep; 0 means fully inside
    margin: float = 0.0


def is_truncated(obj: GtObject, image_size, fraction: float = C.TRUNCATION_CLIP_FRACTION) -> bool:
    """Whether more than ``fraction`` of the box area lies outside the image.

    Annotations carry no truncation bit, so this is an approximation.
    """
    clipped = clip(obj.box, *image_size)
    kept = 0.0 if clipped is None else clipped.area
    # compare areas rather than ratios so an exact 30% is not pushed over by round-off
    return obj.box.area - kept > fraction * obj.box.area


def _fails_training_filter(obj: GtObject, fa: FrameAnnotations, cfg: FilterConfig) -> bool:
    return (obj.box.h < cfg.min_height
            or obj.occlusion in cfg.exclude_occlusion
            or (cfg.exclude_truncated and is_truncated(obj, fa.image_size, cfg.truncation_fraction)))


def filter_training_frames(frames: Sequence[FrameAnnotations],
                           cfg: FilterConfig = FilterConfig()) -> List[FrameAnnotations]:
    """Subsample frames per video and flag unusable instances as ignore.

    Frames are grouped by video (the frame id up to its last ``/``) and every
    ``frame_step``-th frame of each video is kept, counting from the first.
    Instances failing the height, occlusion or truncation test get
    ``ignore=True``; geometry is never touched. Frames left without a single
    non-ignored ``person`` are dropped.
    """
    position = {}
    out = []
    for fa in frames:
        k = position.get(fa.video_id, 0)
        position[fa.video_id] = k + 1
        if k % cfg.frame_step:
            continue
        objs = tuple(
            replace(o, ignore=True) if not o.ignore and _fails_training_filter(o, fa, cfg) else o
            for o in fa.objects)
        if any(o.label == PERSON and not o.ignored for o in objs):
            out.append(replace(fa, objects=objs))
    return out


def reasonable_filter(obj: GtObject, fa: FrameAnnotations,
                      cfg: ReasonableConfig = ReasonableConfig()) -> str:
    """``"evaluate"`` for objects counted by the reasonable setting, else ``"ignore"``."""
    if obj.ignored or obj.label not in cfg.labels:
        return "ignore"
    if obj.box.h < cfg.min_height or obj.occlusion not in cfg.occlusions:
        return "ignore"
    w, h = fa.image_size
    b, m = obj.box, cfg.margin
    if b.x < m or b.y < m or b.x2 > w - m or b.y2 > h - m:
        return "ignore"
    return "evaluate"


@dataclass(frozen=True)
class SegMask:
    stride: int
    labels: np.ndarray = field(repr=False)  # (height, width) uint8 of MASK_* codes

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> dict:
        return {name: int((self.labels == code).sum()) for name, code in
                (("background", MASK_BACKGROUND), ("foreground", MASK_FOREGROUND),
                 ("ignore", MASK_IGNORE))}


def rasterize_masks(fa: FrameAnnotations, stride: int = C.FEATURE_STRIDE) -> SegMask:
    """Rasterize boxes into a weak mask, one cell per ``stride`` pixels.

    A cell takes a box's class when its center lies inside the box.
    Foreground wins over ignore, ignore over background.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    img_w, img_h = fa.image_size
    gw, gh = math.ceil(img_w / stride), math.ceil(img_h / stride)
    cx = (np.arange(gw) + 0.5) * stride
    cy = (np.arange(gh) + 0.5) * stride
    labels = np.full((gh, gw), MASK_BACKGROUND, dtype=np.uint8)
    fg = np.zeros_like(labels, dtype=bool)
    ign = np.zeros_like(labels, dtype=bool)
    for o in fa.objects:
        if o.label in FOREGROUND_LABELS:
            target = fg
        elif o.label == PERSON_IGNORE:
            target = ign
        else:
            continue
        cols = (cx >= o.box.x) & (cx < o.box.x2)
        rows = (cy >= o.box.y) & (cy < o.box.y2)
        target |= rows[:, None] & cols[None, :]
    labels[ign] = MASK_IGNORE
    labels[fg] = MASK_FOREGROUND
    return SegMask(stride, labels)


def mask_to_pgm(mask: SegMask) -> bytes:
    """Binary (P5) PGM: 0 background, 128 ignore, 255 foreground."""
    lut = np.zeros(256, dtype=np.uint8)
    for code, level in PGM_LEVELS.items():
        lut[code] = level
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    return header + lut[mask.labels].tobytes()


def sample_minibatch(labels: Sequence[int], total: int = C.ANCHOR_BATCH,
                     pos_fraction: float = C.ANCHOR_POS_FRACTION, seed=0) -> List[int]:
    """Draw a stratified sample of label indices.

    ``labels`` uses the anchor label codes (``>= 0`` positive, ``NEG``,
    ``IGNORE``). At most ``round(total * pos_fraction)`` positives are drawn,
    the rest of the batch is filled with negatives; ignored entries are
    never drawn. Returns sorted indices. Uses numpy's PCG64 generator, so a
    given seed gives the same draw on every platform.
    """
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0 < pos_fraction < 1:
        raise ValueError("pos_fraction must be in (0, 1)")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    rng = np.random.Generator(np.random.PCG64(seed))
    pos = np.flatnonzero(labels >= 0)
    neg = np.flatnonzero(labels == NEG)
    n_pos = min(len(pos), math.floor(total * pos_fraction + 0.5))
    n_neg = min(len(neg), total - n_pos)
    chosen = np.concatenate([rng.permutation(pos)[:n_pos], rng.permutation(neg)[:n_neg]])
    return sorted(int(i) for i in chosen)
