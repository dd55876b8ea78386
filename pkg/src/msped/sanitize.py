"""Annotation sanitization support.

* :func:`resolve_misalignment` merges a color/thermal box pair that does not
  line up into one ``person?a`` ignore region.
* :func:`lint_annotations` flags suspicious boxes for a human to review.
* :func:`diff_annotations` classifies the changes between two annotation
  versions, and :func:`apply_exclusion` rebuilds a version with one kind of
  correction reverted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from . import constants as C
from .annot_io import PERSON, PERSON_IGNORE, PERSON_UNCERTAIN, FrameAnnotations, GtObject
from .geometry import Box, iou, iou_matrix, union_box

CATEGORIES = ("localization", "classification", "alignment")
# diff change kinds reverted when a correction category is excluded
CATEGORY_KINDS = {
    "localization": ("localization",),
    "classification": ("classification", "added", "removed"),
    "alignment": ("alignment",),
}
CHANGE_KINDS = ("unchanged", "localization", "classification", "added", "removed", "alignment")


def resolve_misalignment(color_box: Box, thermal_box: Box,
                         iou_threshold: float = C.MISALIGNMENT_IOU,
                         reference: str = "color",
                         label: str = PERSON) -> Tuple[Box, str]:
    """Reconcile one instance labeled separately in both modalities.

    IoU below ``iou_threshold`` gives the bounding union labeled
    ``person?a``. Otherwise the ``reference`` box (``color``, ``thermal``
    or the coordinate-wise ``average``) keeps ``label``.
    """
    if iou(color_box, thermal_box) < iou_threshold:
        return union_box(color_box, thermal_box), PERSON_IGNORE
    if reference == "color":
        return color_box, label
    if reference == "thermal":
        return thermal_box, label
    if reference == "average":
        return Box(*((a + b) / 2 for a, b in zip(color_box.as_tuple(), thermal_box.as_tuple()))), label
    raise ValueError(f"reference must be color/thermal/average, got {reference!r}")


def align_frames(color: Sequence[FrameAnnotations], thermal: Sequence[FrameAnnotations],
                 iou_threshold: float = C.MISALIGNMENT_IOU,
                 reference: str = "color") -> List[FrameAnnotations]:
    """Apply :func:`resolve_misalignment` to paired annotation sets.

    Frames pair by id and objects by position; the color object supplies
    every attribute besides the box.
    """
    thermal_by_id = {f.frame_id: f for f in thermal}
    if len(thermal_by_id) != len(thermal) or {f.frame_id for f in color} != set(thermal_by_id):
        raise ValueError("color and thermal annotations must cover the same unique frame ids")
    out = []
    for cf in color:
        tf = thermal_by_id[cf.frame_id]
        if len(cf.objects) != len(tf.objects):
            raise ValueError(f"frame {cf.frame_id!r}: {len(cf.objects)} color objects vs "
                             f"{len(tf.objects)} thermal objects")
        objs = []
        for co, to in zip(cf.objects, tf.objects):
            box, label = resolve_misalignment(co.box, to.box, iou_threshold, reference, co.label)
            if label == PERSON_IGNORE and co.label != PERSON_IGNORE:
                objs.append(replace(co, label=label, box=box, ignore=True, visible=(0, 0, 0, 0)))
            else:
                objs.append(replace(co, box=box))
        out.append(replace(cf, objects=tuple(objs)))
    return out


# ---------------------------------------------------------------------------
# lints
# ---------------------------------------------------------------------------

LINT_CODES = ("aspect", "duplicate", "out_of_bounds", "too_small", "ignore_flag", "unknown_label")


@dataclass(frozen=True, order=True)
class LintIssue:
    frame_id: str
    object_index: int
    code: str
    message: str


@dataclass(frozen=True)
class LintConfig:
    aspect_range: Tuple[float, float] = (0.2, 0.8)
    duplicate_iou: float = 0.8
    bounds_tolerance: float = 1.0
    min_height: float = 10.0


def lint_frame(fa: FrameAnnotations, cfg: LintConfig = LintConfig()) -> List[LintIssue]:
    issues = []
    img_w, img_h = fa.image_size
    lo, hi = cfg.aspect_range
    objs = fa.objects
    for i, o in enumerate(objs):
        b = o.box
        if o.label in (PERSON, PERSON_UNCERTAIN) and not lo <= b.w / b.h <= hi:
            issues.append(LintIssue(fa.frame_id, i, "aspect",
                                    f"w/h = {b.w / b.h:.3f} outside [{lo}, {hi}]"))
        tol = cfg.bounds_tolerance
        if b.x < -tol or b.y < -tol or b.x2 > img_w + tol or b.y2 > img_h + tol:
            issues.append(LintIssue(fa.frame_id, i, "out_of_bounds",
                                    f"box exceeds {img_w}x{img_h} image by more than {tol:g} px"))
        if b.h < cfg.min_height:
            issues.append(LintIssue(fa.frame_id, i, "too_small",
                                    f"height {b.h:g} px below {cfg.min_height:g}"))
        if o.label == PERSON_IGNORE and not o.ignore:
            issues.append(LintIssue(fa.frame_id, i, "ignore_flag", "person?a without ignore flag"))
        if not o.known_label:
            issues.append(LintIssue(fa.frame_id, i, "unknown_label", f"unknown label {o.label!r}"))
    if len(objs) > 1:
        m = iou_matrix([o.box for o in objs], [o.box for o in objs])
        for j in range(len(objs)):
            for i in range(j):
                if objs[i].label == objs[j].label and m[i, j] > cfg.duplicate_iou:
                    issues.append(LintIssue(fa.frame_id, j, "duplicate",
                                            f"IoU {m[i, j]:.3f} with object {i} ({objs[i].label})"))
    return issues


@dataclass(frozen=True)
class LintReport:
    issues: Tuple[LintIssue, ...]

    def counts(self) -> Dict[str, int]:
        out = {c: 0 for c in LINT_CODES}
        for i in self.issues:
            out[i.code] += 1
        return out

    def to_text(self) -> str:
        lines = [f"{i.frame_id}\t#{i.object_index}\t{i.code}\t{i.message}" for i in self.issues]
        lines.append(f"{len(self.issues)} issue(s): " +
                     ", ".join(f"{c}={n}" for c, n in self.counts().items()))
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {"issues": [{"frame_id": i.frame_id, "object_index": i.object_index,
                            "code": i.code, "message": i.message} for i in self.issues],
                "counts": self.counts()}


def lint_annotations(frames: Iterable[FrameAnnotations], cfg: LintConfig = LintConfig()) -> LintReport:
    """Advisory checks; the report is sorted by frame id, object and code."""
    issues = [iss for f in frames for iss in lint_frame(f, cfg)]
    return LintReport(tuple(sorted(issues)))


# ---------------------------------------------------------------------------
# diffs
# ---------------------------------------------------------------------------


@dataclass
class FrameDiff:
    """Index-level changes between an old and a new object list."""

    unchanged: List[Tuple[int, int]] = field(default_factory=list)
    localization: List[Tuple[int, int]] = field(default_factory=list)
    classification: List[Tuple[int, int]] = field(default_factory=list)
    added: List[int] = field(default_factory=list)
    removed: List[int] = field(default_factory=list)
    alignment: List[Tuple[Tuple[int, ...], int]] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        return {k: len(getattr(self, k)) for k in CHANGE_KINDS}

    @property
    def changed(self) -> bool:
        return any(getattr(self, k) for k in CHANGE_KINDS if k != "unchanged")


@dataclass
class AnnotationDiff:
    frames: Dict[str, FrameDiff]
    only_old: List[str] = field(default_factory=list)
    only_new: List[str] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        out = {k: 0 for k in CHANGE_KINDS}
        for fd in self.frames.values():
            for k, n in fd.counts().items():
                out[k] += n
        return out

    def to_record(self) -> dict:
        frames = {}
        for fid in sorted(self.frames):
            fd = self.frames[fid]
            if not fd.changed:
                continue
            frames[fid] = {
                "localization": [list(p) for p in fd.localization],
                "classification": [list(p) for p in fd.classification],
                "added": list(fd.added),
                "removed": list(fd.removed),
                "alignment": [{"old": list(o), "new": n} for o, n in fd.alignment],
            }
        return {"counts": self.counts(), "frames": frames,
                "only_old": sorted(self.only_old), "only_new": sorted(self.only_new)}

    def summary_table(self) -> str:
        counts = self.counts()
        width = max(len(k) for k in counts)
        lines = [f"{'change':<{width}}  count"]
        lines += [f"{k:<{width}}  {v:>5}" for k, v in counts.items()]
        if self.only_old or self.only_new:
            lines.append(f"frames only in old: {len(self.only_old)}, only in new: {len(self.only_new)}")
        return "\n".join(lines) + "\n"


def _same_geometry(a: GtObject, b: GtObject) -> bool:
    return a.box == b.box and a.visible == b.visible and a.angle == b.angle


def _corners(b: Box):
    return (b.x, b.y, b.x2, b.y2)


def _union_cover(target: Box, boxes: Sequence[Tuple[int, Box]], tol: float = 1e-9):
    """Indices of contained boxes whose union is ``target``, or None."""
    inside = [(k, b) for k, b in boxes if
              b.x >= target.x - tol and b.y >= target.y - tol and
              b.x2 <= target.x2 + tol and b.y2 <= target.y2 + tol]
    inside.sort(key=lambda kb: (-kb[1].area, kb[0]))
    chosen, cur = [], None
    want = _corners(target)
    for k, b in inside:
        nxt = b if cur is None else union_box(cur, b)
        if cur is not None and _corners(nxt) == _corners(cur):
            continue
        chosen.append(k)
        cur = nxt
        if all(abs(p - q) <= tol for p, q in zip(_corners(cur), want)):
            return sorted(chosen)
    return None


def diff_frame(old: Sequence[GtObject], new: Sequence[GtObject],
               identity_iou: float = C.DIFF_IDENTITY_IOU) -> FrameDiff:
    """Classify the changes from ``old`` to ``new`` objects of one frame.

    Identical objects pair first (in order). A new ``person?a`` box that is
    exactly the union of one or more remaining old boxes is an alignment
    change. Remaining objects pair greedily by descending IoU, down to
    ``identity_iou``: a pair with changed geometry is a localization change,
    one with only label/occlusion/ignore changes a classification change.
    Leftovers are removed (old) or added (new).
    """
    fd = FrameDiff()
    old_free = [True] * len(old)
    new_free = [True] * len(new)

    for j, n in enumerate(new):
        for i, o in enumerate(old):
            if old_free[i] and o == n:
                fd.unchanged.append((i, j))
                old_free[i] = new_free[j] = False
                break

    for j, n in enumerate(new):
        if not new_free[j] or n.label != PERSON_IGNORE:
            continue
        cover = _union_cover(n.box, [(i, old[i].box) for i in range(len(old)) if old_free[i]])
        if cover is not None:
            fd.alignment.append((tuple(cover), j))
            new_free[j] = False
            for i in cover:
                old_free[i] = False

    oi = [i for i in range(len(old)) if old_free[i]]
    nj = [j for j in range(len(new)) if new_free[j]]
    if oi and nj:
        m = iou_matrix([old[i].box for i in oi], [new[j].box for j in nj])
        pairs = sorted(((m[a, b], a, b) for a in range(len(oi)) for b in range(len(nj))
                        if m[a, b] >= identity_iou), key=lambda t: (-t[0], t[1], t[2]))
        used_a, used_b = set(), set()
        for _, a, b in pairs:
            if a in used_a or b in used_b:
                continue
            used_a.add(a)
            used_b.add(b)
            i, j = oi[a], nj[b]
            old_free[i] = new_free[j] = False
            if old[i] == new[j]:
                fd.unchanged.append((i, j))
            elif _same_geometry(old[i], new[j]):
                fd.classification.append((i, j))
            else:
                fd.localization.append((i, j))

    fd.removed = [i for i in range(len(old)) if old_free[i]]
    fd.added = [j for j in range(len(new)) if new_free[j]]
    for k in ("unchanged", "localization", "classification"):
        getattr(fd, k).sort()
    fd.alignment.sort(key=lambda t: t[1])
    return fd


def _index_frames(frames: Sequence[FrameAnnotations], which: str) -> Dict[str, FrameAnnotations]:
    out = {}
    for f in frames:
        if f.frame_id in out:
            raise ValueError(f"duplicate frame id {f.frame_id!r} in {which} annotations")
        out[f.frame_id] = f
    return out


def diff_annotations(old_set: Sequence[FrameAnnotations], new_set: Sequence[FrameAnnotations],
                     identity_iou: float = C.DIFF_IDENTITY_IOU) -> AnnotationDiff:
    old = _index_frames(old_set, "old")
    new = _index_frames(new_set, "new")
    frames = {fid: diff_frame(old[fid].objects, new[fid].objects, identity_iou)
              for fid in sorted(old.keys() & new.keys())}
    return AnnotationDiff(frames, sorted(old.keys() - new.keys()), sorted(new.keys() - old.keys()))


def _revert_frame(old: Sequence[GtObject], new: Sequence[GtObject], fd: FrameDiff,
                  kinds: Sequence[str]) -> Tuple[GtObject, ...]:
    # Every emitted object is keyed by its position in the old list where it
    # has one; new-only objects follow the nearest preceding new object that
    # does. Reverting everything therefore reproduces the old order exactly.
    items = []
    anchor_of = {}
    for kind in ("unchanged", "localization", "classification"):
        for i, j in getattr(fd, kind):
            anchor_of[j] = i
            obj = old[i] if kind in kinds else new[j]
            items.append(((i, 0, 0), obj))
    for olds, j in fd.alignment:
        anchor_of[j] = olds[0]
        if "alignment" in kinds:
            items += [((i, 0, 0), old[i]) for i in olds]
        else:
            items.append(((olds[0], 0, 0), new[j]))
    if "removed" in kinds:
        items += [((i, 0, 0), old[i]) for i in fd.removed]
    if "added" not in kinds:
        for j in fd.added:
            prev = [anchor_of[k] for k in range(j) if k in anchor_of]
            items.append(((prev[-1] if prev else -1, 1, j), new[j]))
    items.sort(key=lambda t: t[0])
    return tuple(obj for _, obj in items)


def apply_exclusion(full_sanitized: Sequence[FrameAnnotations], original: Sequence[FrameAnnotations],
                    category: Union[str, Iterable[str]],
                    identity_iou: float = C.DIFF_IDENTITY_IOU) -> List[FrameAnnotations]:
    """Revert one (or several) correction categories of a sanitized set.

    ``category`` is ``localization``, ``classification`` (which covers
    relabeling as well as added and removed boxes) or ``alignment``.
    Objects changed in both geometry and attributes count as localization
    changes and are reverted whole.
    """
    cats = (category,) if isinstance(category, str) else tuple(category)
    unknown = [c for c in cats if c not in CATEGORIES]
    if unknown:
        raise ValueError(f"unknown correction category {unknown}; expected one of {CATEGORIES}")
    kinds = tuple(k for c in cats for k in CATEGORY_KINDS[c])
    orig = _index_frames(original, "original")
    _index_frames(full_sanitized, "sanitized")
    out = []
    for f in full_sanitized:
        if f.frame_id not in orig:
            out.append(f)
            continue
        o = orig[f.frame_id]
        fd = diff_frame(o.objects, f.objects, identity_iou)
        if not any(getattr(fd, k) for k in kinds):
            out.append(f)
            continue
        out.append(replace(f, objects=_revert_frame(o.objects, f.objects, fd, kinds)))
    return out
