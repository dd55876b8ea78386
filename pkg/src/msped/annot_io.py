"""Annotation and detection file formats.

Three formats are supported:

* bbGt v3 ground truth, one text file per frame::

      % bbGt version=3
      person 10 20 30 60 0 0 0 0 0 0 0

  body columns are ``label x y w h occluded vx vy vw vh ignore angle``.
* detection CSV, one file per detector run, rows ``frame_index,x,y,w,h,score``
  with 1-based frame indices resolved through a frame table.
* a canonical JSON document holding frames, objects and detections.

A ground-truth *tree* is a directory of bbGt files (``<frame_id>.txt``) with
an optional ``frames.csv`` frame table next to them.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import jsonschema

from . import FORMAT_VERSION
from .constants import IMAGE_SIZE, STREAMS
from .geometry import Box

PERSON = "person"
PERSON_UNCERTAIN = "person?"
PEOPLE = "people"
PERSON_IGNORE = "person?a"
CYCLIST = "cyclist"
KNOWN_LABELS = (PERSON, PERSON_UNCERTAIN, PEOPLE, PERSON_IGNORE, CYCLIST)

OCCLUSIONS = ("none", "partial", "heavy")

BBGT_HEADER = "% bbGt version=3"
DETECTION_COLUMNS = ("frame_index", "x", "y", "w", "h", "score")
FRAME_TABLE_COLUMNS = ("frame_index", "frame_id", "time_of_day", "width", "height")


class FormatError(ValueError):
    """Malformed input, with a location (line/column or JSON path)."""

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.column = column
        self.path = path
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{', '.join(loc)}: {message}" if loc else message)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GtObject:
    label: str
    box: Box
    occlusion: str = "none"
    ignore: bool = False
    # remaining bbGt columns, carried so files round-trip
    visible: Tuple[float, float, float, float] = (0, 0, 0, 0)
    angle: float = 0

    def __post_init__(self):
        if self.occlusion not in OCCLUSIONS:
            raise ValueError(f"unknown occlusion state {self.occlusion!r}")

    @property
    def ignored(self) -> bool:
        """Effective ignore state; ``person?a`` is ignored even without the flag."""
        return self.ignore or self.label == PERSON_IGNORE

    @property
    def known_label(self) -> bool:
        return self.label in KNOWN_LABELS


@dataclass(frozen=True)
class FrameAnnotations:
    frame_id: str
    objects: Tuple[GtObject, ...] = ()
    time_of_day: str = "day"
    image_size: Tuple[int, int] = IMAGE_SIZE  # (width, height)

    def __post_init__(self):
        if self.time_of_day not in ("day", "night"):
            raise ValueError(f"time_of_day must be day/night, got {self.time_of_day!r}")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "image_size", tuple(self.image_size))

    @property
    def video_id(self) -> str:
        return self.frame_id.rsplit("/", 1)[0] if "/" in self.frame_id else ""


@dataclass(frozen=True)
class StreamLogits:
    """Per-stream 2-class logits ``(c0, c1)``; MCN streams may be absent."""

    mpn: Tuple[float, float]
    color: Optional[Tuple[float, float]] = None
    thermal: Optional[Tuple[float, float]] = None
    merged: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        for name in STREAMS:
            pair = getattr(self, name)
            if pair is None:
                if name == "mpn":
                    raise ValueError("MPN logits are required")
                continue
            pair = tuple(float(v) for v in pair)
            if len(pair) != 2 or not all(math.isfinite(v) for v in pair):
                raise ValueError(f"stream {name} needs two finite logits, got {pair!r}")
            object.__setattr__(self, name, pair)

    def present(self) -> Dict[str, Tuple[float, float]]:
        return {s: getattr(self, s) for s in STREAMS if getattr(self, s) is not None}


@dataclass(frozen=True)
class Detection:
    frame_id: str
    box: Box
    score: float
    stream_logits: Optional[StreamLogits] = None

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score out of [0, 1]: {self.score!r}")


@dataclass
class Dataset:
    frames: List[FrameAnnotations] = field(default_factory=list)
    detections: List[Detection] = field(default_factory=list)

    def frame_table(self) -> Dict[int, str]:
        return {i + 1: f.frame_id for i, f in enumerate(self.frames)}


# ---------------------------------------------------------------------------
# number formatting
# ---------------------------------------------------------------------------


def format_number(v: float) -> str:
    """Shortest text that parses back to exactly ``v``; integers lose the ``.0``."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


# ---------------------------------------------------------------------------
# bbGt
# ---------------------------------------------------------------------------

_OCC_TERNARY = {0: "none", 1: "partial", 2: "heavy"}
_OCC_CODE = {v: k for k, v in _OCC_TERNARY.items()}


def parse_bbgt(text: str, frame_id: str = "", time_of_day: str = "day",
               image_size: Tuple[int, int] = IMAGE_SIZE,
               occlusion_coding: str = "auto") -> FrameAnnotations:
    """Parse one frame's bbGt v3 file.

    ``occlusion_coding`` is ``binary`` (0/1 -> none/partial), ``ternary``
    (0/1/2 -> none/partial/heavy) or ``auto``, which accepts either.
    """
    if occlusion_coding not in ("auto", "binary", "ternary"):
        raise ValueError(f"unknown occlusion coding {occlusion_coding!r}")
    lines = text.splitlines()
    if not lines:
        raise FormatError("missing bbGt header", line=1)
    header = lines[0].strip()
    m = re.fullmatch(r"%\s*bbGt\s+version\s*=\s*(\S+)", header)
    if m is None:
        raise FormatError(f"malformed bbGt header {header!r}", line=1)
    if m.group(1) != "3":
        raise FormatError(f"unsupported bbGt version {m.group(1)!r} (expected 3)", line=1)

    objects = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cols = raw.split()
        if len(cols) != 12:
            raise FormatError(f"expected 12 fields, found {len(cols)}", line=lineno)
        label = cols[0]
        values = []
        for col, tok in enumerate(cols[1:], start=2):
            try:
                v = float(tok)
            except ValueError:
                raise FormatError(f"non-numeric field {tok!r}", line=lineno, column=col) from None
            if not math.isfinite(v):
                raise FormatError(f"non-finite field {tok!r}", line=lineno, column=col)
            values.append(v)
        x, y, w, h, occ, vx, vy, vw, vh, ign, angle = values
        occ_limit = 1 if occlusion_coding == "binary" else 2
        if occ not in _OCC_TERNARY or occ > occ_limit:
            raise FormatError(f"bad occlusion code {cols[5]!r}", line=lineno, column=6)
        if ign not in (0, 1):
            raise FormatError(f"bad ignore flag {cols[10]!r}", line=lineno, column=11)
        try:
            box = Box(x, y, w, h)
        except ValueError as e:
            raise FormatError(str(e), line=lineno, column=4) from None
        try:
            objects.append(GtObject(
                label=label, box=box, occlusion=_OCC_TERNARY[int(occ)],
                ignore=bool(ign), visible=(vx, vy, vw, vh), angle=angle))
        except ValueError as e:
            raise FormatError(str(e), line=lineno) from None
    return FrameAnnotations(frame_id, tuple(objects), time_of_day, image_size)


def write_bbgt(fa: FrameAnnotations) -> str:
    out = [BBGT_HEADER]
    for o in fa.objects:
        fields = [o.label, *o.box.as_tuple(), _OCC_CODE[o.occlusion], *o.visible,
                  int(o.ignore), o.angle]
        out.append(" ".join(f if isinstance(f, str) else format_number(f) for f in fields))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------


def parse_detections(text: str, frame_table: Optional[Dict[int, str]] = None) -> List[Detection]:
    """Parse a ``frame_index,x,y,w,h,score`` file.

    Without a frame table the frame id is the decimal frame index. A header
    row naming the six columns is tolerated.
    """
    dets = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split(",")]
        if lineno == 1 and tuple(cols) == DETECTION_COLUMNS:
            continue
        if len(cols) != 6:
            raise FormatError(f"expected 6 comma-separated fields, found {len(cols)}", line=lineno)
        vals = []
        for col, tok in enumerate(cols, start=1):
            try:
                vals.append(float(tok))
            except ValueError:
                raise FormatError(f"non-numeric field {tok!r}", line=lineno, column=col) from None
        idx, x, y, w, h, score = vals
        if not idx.is_integer() or idx < 1:
            raise FormatError(f"frame index must be a positive integer, got {cols[0]!r}",
                              line=lineno, column=1)
        if not (0.0 <= score <= 1.0):
            raise FormatError(f"score {cols[5]!r} outside [0, 1]", line=lineno, column=6)
        idx = int(idx)
        if frame_table is None:
            frame_id = str(idx)
        elif idx in frame_table:
            frame_id = frame_table[idx]
        else:
            raise FormatError(f"frame index {idx} not in frame table", line=lineno, column=1)
        try:
            box = Box(x, y, w, h)
        except ValueError as e:
            raise FormatError(str(e), line=lineno, column=4) from None
        dets.append(Detection(frame_id, box, score))
    return dets


def write_detections(dets: Iterable[Detection], frame_table: Optional[Dict[int, str]] = None) -> str:
    """Inverse of :func:`parse_detections` (no header row)."""
    if frame_table is None:
        index_of = None
    else:
        index_of = {fid: idx for idx, fid in frame_table.items()}
    rows = []
    for d in dets:
        idx = int(d.frame_id) if index_of is None else index_of[d.frame_id]
        rows.append(",".join([str(idx), *(format_number(v) for v in d.box.as_tuple()),
                              format_number(d.score)]))
    return "".join(r + "\n" for r in rows)


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_BOX = {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

CANONICAL_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "frames", "detections"],
    "additionalProperties": False,
    "properties": {
        "format": {"const": "msped-dataset"},
        "version": {"const": FORMAT_VERSION},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame_id", "time_of_day", "image_size", "objects"],
                "additionalProperties": False,
                "properties": {
                    "frame_id": {"type": "string"},
                    "time_of_day": {"enum": ["day", "night"]},
                    "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                   "minItems": 2, "maxItems": 2},
                    "objects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["label", "box", "occlusion", "ignore", "visible", "angle"],
                            "additionalProperties": False,
                            "properties": {
                                "label": {"type": "string"},
                                "box": _BOX,
                                "occlusion": {"enum": list(OCCLUSIONS)},
                                "ignore": {"type": "boolean"},
                                "visible": _BOX,
                                "angle": _NUM,
                            },
                        },
                    },
                },
            },
        },
        "detections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame_id", "box", "score"],
                "additionalProperties": False,
                "properties": {
                    "frame_id": {"type": "string"},
                    "box": _BOX,
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                    "stream_logits": {
                        "type": ["object", "null"],
                        "required": ["mpn"],
                        "additionalProperties": False,
                        "properties": {s: {"oneOf": [_PAIR, {"type": "null"}]} for s in STREAMS},
                    },
                },
            },
        },
    },
}


def _json_path(error: jsonschema.ValidationError) -> str:
    out = "$"
    for p in error.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def dumps_json(obj) -> str:
    """Deterministic JSON text used for every machine-readable output."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _object_record(o: GtObject) -> dict:
    return {"label": o.label, "box": list(o.box.as_tuple()), "occlusion": o.occlusion,
            "ignore": o.ignore, "visible": list(o.visible), "angle": o.angle}


def frame_record(f: FrameAnnotations) -> dict:
    return {"frame_id": f.frame_id, "time_of_day": f.time_of_day,
            "image_size": list(f.image_size),
            "objects": [_object_record(o) for o in f.objects]}


def detection_record(d: Detection) -> dict:
    rec = {"frame_id": d.frame_id, "box": list(d.box.as_tuple()), "score": d.score}
    if d.stream_logits is not None:
        rec["stream_logits"] = {s: (list(p) if p is not None else None)
                                for s in STREAMS for p in [getattr(d.stream_logits, s)]}
    return rec


def write_canonical(ds: Dataset) -> str:
    return dumps_json({
        "format": "msped-dataset",
        "version": FORMAT_VERSION,
        "frames": [frame_record(f) for f in ds.frames],
        "detections": [detection_record(d) for d in ds.detections],
    })


def read_canonical(text: str) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", line=e.lineno, column=e.colno) from None
    try:
        jsonschema.validate(doc, CANONICAL_SCHEMA)
    except jsonschema.ValidationError as e:
        raise FormatError(e.message, path=_json_path(e)) from None

    frames = []
    seen = set()
    for i, fr in enumerate(doc["frames"]):
        if fr["frame_id"] in seen:
            raise FormatError(f"duplicate frame_id {fr['frame_id']!r}", path=f"$.frames[{i}]")
        seen.add(fr["frame_id"])
        objs = []
        for j, o in enumerate(fr["objects"]):
            try:
                objs.append(GtObject(o["label"], Box(*o["box"]), o["occlusion"], o["ignore"],
                                     tuple(o["visible"]), o["angle"]))
            except ValueError as e:
                raise FormatError(str(e), path=f"$.frames[{i}].objects[{j}]") from None
        frames.append(FrameAnnotations(fr["frame_id"], tuple(objs), fr["time_of_day"],
                                       tuple(fr["image_size"])))
    dets = []
    for i, d in enumerate(doc["detections"]):
        try:
            sl = d.get("stream_logits")
            logits = None if sl is None else StreamLogits(**{
                s: (tuple(sl[s]) if sl.get(s) is not None else None) for s in STREAMS})
            dets.append(Detection(d["frame_id"], Box(*d["box"]), d["score"], logits))
        except ValueError as e:
            raise FormatError(str(e), path=f"$.detections[{i}]") from None
    return Dataset(frames, dets)


# ---------------------------------------------------------------------------
# ground-truth trees and atomic file output
# ---------------------------------------------------------------------------


def atomic_write(path, data) -> None:
    """Write text (UTF-8) or bytes to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        if isinstance(data, str):
            data = data.encode("utf-8")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def kaist_time_of_day(frame_id: str) -> str:
    """Day/night from KAIST set numbering (set00-02, 06-08 day; others night)."""
    m = re.match(r"set(\d+)", frame_id)
    if m is None:
        return "day"
    return "day" if int(m.group(1)) in (0, 1, 2, 6, 7, 8) else "night"


def write_frame_table(frames: Sequence[FrameAnnotations]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FRAME_TABLE_COLUMNS)
    for i, f in enumerate(frames, start=1):
        w.writerow([i, f.frame_id, f.time_of_day, f.image_size[0], f.image_size[1]])
    return buf.getvalue()


def parse_frame_table(text: str) -> List[Tuple[int, str, str, Tuple[int, int]]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != FRAME_TABLE_COLUMNS:
        raise FormatError(f"frame table header must be {','.join(FRAME_TABLE_COLUMNS)}", line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"expected 5 fields, found {len(row)}", line=lineno)
        try:
            idx, w, h = int(row[0]), int(row[3]), int(row[4])
        except ValueError:
            raise FormatError("non-integer index or size", line=lineno) from None
        if row[2] not in ("day", "night"):
            raise FormatError(f"bad time_of_day {row[2]!r}", line=lineno, column=3)
        if idx != len(out) + 1:
            raise FormatError(f"frame indices must run 1..N in order, got {idx}", line=lineno, column=1)
        out.append((idx, row[1], row[2], (w, h)))
    return out


def read_gt_tree(root, occlusion_coding: str = "auto", executor=None) -> List[FrameAnnotations]:
    """Load every frame of a bbGt tree.

    With ``frames.csv`` present, frames come in table order with its
    metadata; otherwise all ``*.txt`` files are taken in sorted path order
    and day/night follows the KAIST set numbering.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {root}")
    table_path = root / "frames.csv"
    if table_path.exists():
        entries = [(fid, tod, size) for _, fid, tod, size
                   in parse_frame_table(table_path.read_text(encoding="utf-8"))]
    else:
        files = sorted(p.relative_to(root).with_suffix("").as_posix() for p in root.rglob("*.txt"))
        entries = [(fid, kaist_time_of_day(fid), IMAGE_SIZE) for fid in files]

    def load(entry):
        fid, tod, size = entry
        path = root / f"{fid}.txt"
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FileNotFoundError(f"annotation file not found: {path}") from None
        try:
            return parse_bbgt(text, fid, tod, size, occlusion_coding)
        except FormatError as e:
            raise FormatError(str(e), path=str(path)) from None

    mapper = map if executor is None else executor.map
    return list(mapper(load, entries))


def write_gt_tree(root, frames: Sequence[FrameAnnotations]) -> None:
    root = Path(root)
    for f in frames:
        atomic_write(root / f"{f.frame_id}.txt", write_bbgt(f))
    atomic_write(root / "frames.csv", write_frame_table(frames))
