"""Command-line entry point: ``msped <subcommand> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 internal error. Human
summaries go to stdout (canonical JSON with ``--json``), diagnostics to
stderr, machine outputs only to files named by options. Any option can also
come from ``--config FILE`` (a JSON object keyed by option name, optionally
nested under the subcommand name); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

from . import FORMAT_VERSION, __version__
from . import constants as C
from .anchors import anchor_spec_from_heights
from .annot_io import (PERSON, FormatError, atomic_write, dumps_json, parse_detections,
                       read_canonical, read_gt_tree, write_canonical, write_detections,
                       write_gt_tree)
from .dataset import FilterConfig, ReasonableConfig, filter_training_frames, mask_to_pgm, rasterize_masks
from .evaluation import EvalConfig, EvaluationError, export_curve, subset_eval
from .fusion import nms_per_frame, rescore
from .harness import DetectorConfig, SynthConfig, synth_all
from .sanitize import align_frames, diff_annotations, lint_annotations


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# (dest, flags, type, default, help); default REQUIRED marks a mandatory option
REQUIRED = object()
COMMON = [
    ("json", ["--json"], bool, False, "print the summary as canonical JSON"),
    ("threads", ["--threads"], int, None, "worker threads (default: all cores)"),
    ("config", ["--config"], str, None, "JSON file supplying option values"),
]
EVAL_OPTS = [
    ("gt", ["--gt"], str, REQUIRED, "ground-truth bbGt directory"),
    ("dets", ["--dets"], str, REQUIRED, "detection CSV (frame_index,x,y,w,h,score)"),
    ("subset", ["--subset"], str, "all", "all, day or night"),
    ("iou", ["--iou"], float, C.MATCH_IOU, "match IoU threshold"),
    ("min_height", ["--min-height"], float, C.REASONABLE_MIN_HEIGHT, "reasonable min height"),
    ("occlusion_coding", ["--occlusion-coding"], str, "auto", "auto, binary or ternary"),
]
COMMANDS = {
    "eval": ("log-average miss rate of a detection file", EVAL_OPTS + [
        ("out_curve", ["--out-curve"], str, None, "also write the curve CSV here"),
    ]),
    "curve": ("FPPI / miss-rate curve as CSV", EVAL_OPTS + [
        ("out", ["--out"], str, None, "output CSV (default: stdout)"),
    ]),
    "anchors": ("derive anchor heights from training annotations", [
        ("gt", ["--gt"], str, REQUIRED, "training bbGt directory"),
        ("bins", ["--bins"], int, C.ANCHOR_BINS, "quantile bins"),
        ("aspect", ["--aspect"], float, C.ANCHOR_ASPECT_RATIO, "anchor width / height"),
        ("stride", ["--stride"], int, C.FEATURE_STRIDE, "feature stride in pixels"),
        ("out", ["--out"], str, None, "write the anchor spec JSON here"),
    ]),
    "fuse": ("re-score detections from their stream logits", [
        ("input", ["--in"], str, REQUIRED, "canonical JSON with per-stream logits"),
        ("streams", ["--streams"], str, ",".join(C.STREAMS), "comma-separated streams to fuse"),
        ("nms", ["--nms"], float, None, "per-frame NMS IoU after fusion (default: off)"),
        ("out", ["--out"], str, REQUIRED, "fused detection CSV"),
    ]),
    "masks": ("rasterize weak segmentation masks as PGM", [
        ("gt", ["--gt"], str, REQUIRED, "bbGt directory"),
        ("stride", ["--stride"], int, C.FEATURE_STRIDE, "pixels per mask cell"),
        ("out", ["--out"], str, REQUIRED, "output directory"),
    ]),
    "lint": ("flag suspicious annotations", [
        ("gt", ["--gt"], str, REQUIRED, "bbGt directory"),
        ("out", ["--out"], str, None, "write the JSON report here"),
    ]),
    "diff": ("classify changes between two annotation versions", [
        ("old", ["--old"], str, REQUIRED, "original bbGt directory"),
        ("new", ["--new"], str, REQUIRED, "revised bbGt directory"),
        ("identity_iou", ["--identity-iou"], float, C.DIFF_IDENTITY_IOU, "same-object IoU"),
        ("out", ["--out"], str, None, "write the diff JSON here"),
    ]),
    "align": ("merge misaligned color/thermal boxes into ignore regions", [
        ("color", ["--color"], str, REQUIRED, "color-image bbGt directory"),
        ("thermal", ["--thermal"], str, REQUIRED, "thermal-image bbGt directory"),
        ("iou", ["--iou"], float, C.MISALIGNMENT_IOU, "alignment IoU threshold"),
        ("reference", ["--reference"], str, "color", "box kept when aligned: color/thermal/average"),
        ("out", ["--out"], str, REQUIRED, "output bbGt directory"),
    ]),
    "synth": ("write a synthetic dataset tree", [
        ("seed", ["--seed"], int, 0, "random seed"),
        ("frames", ["--frames"], int, 100, "number of frames"),
        ("persons", ["--persons"], float, 3.0, "mean persons per frame"),
        ("day_fraction", ["--day-fraction"], float, 0.5, "fraction of day frames"),
        ("recall", ["--recall"], float, 0.8, "detector recall"),
        ("fppi", ["--fppi"], float, 0.5, "detector false positives per frame"),
        ("jitter", ["--jitter"], float, 0.0, "box jitter std in pixels"),
        ("out", ["--out"], str, REQUIRED, "output directory"),
    ]),
    "filter": ("apply the training-frame protocol", [
        ("gt", ["--gt"], str, REQUIRED, "bbGt directory"),
        ("step", ["--step"], int, C.TRAIN_FRAME_STEP, "keep every N-th frame per video"),
        ("min_height", ["--min-height"], float, C.TRAIN_MIN_HEIGHT, "min instance height"),
        ("keep_truncated", ["--keep-truncated"], bool, False, "do not ignore truncated instances"),
        ("out", ["--out"], str, REQUIRED, "output bbGt directory"),
    ]),
}


def _add_options(p, opts):
    for dest, flags, typ, _default, help_ in opts:
        if typ is bool:
            p.add_argument(*flags, dest=dest, action="store_true", default=argparse.SUPPRESS,
                           help=help_)
        else:
            p.add_argument(*flags, dest=dest, type=typ, default=argparse.SUPPRESS, help=help_)


def build_parser() -> _Parser:
    parser = _Parser(prog="msped", description="Multispectral pedestrian detection tooling.")
    parser.add_argument("--version", action="version",
                        version=f"msped {__version__} (format version {FORMAT_VERSION}, bbGt v3)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    for name, (help_, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        _add_options(p, opts + COMMON)
    return parser


def resolve_options(command: str, given: dict, parser: _Parser) -> dict:
    """Merge built-in defaults, the config file and explicit flags."""
    opts = COMMANDS[command][1] + COMMON
    values = {dest: default for dest, _, _, default, _ in opts}
    cfg_path = given.get("config")
    if cfg_path:
        path = Path(cfg_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", line=e.lineno, path=str(path)) from None
        if not isinstance(doc, dict):
            raise FormatError("config must be a JSON object", path=str(path))
        flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        flat.update(doc.get(command, {}))
        known = {dest: typ for dest, _, typ, _, _ in opts}
        for k, v in flat.items():
            if k in COMMANDS:
                continue
            key = k.replace("-", "_")
            if key not in known:
                raise UsageError(f"{parser.format_usage()}msped {command}: error: "
                                 f"unknown option {k!r} in config {path}")
            typ = known[key]
            if typ is bool and not isinstance(v, bool):
                raise UsageError(f"option {k!r} in config {path} must be true or false")
            if typ is not bool and v is not None:
                try:
                    v = typ(v)
                except (TypeError, ValueError):
                    raise UsageError(f"option {k!r} in config {path} must be "
                                     f"{typ.__name__}, got {v!r}") from None
            values[key] = v
    values.update(given)
    missing = [flags[0] for dest, flags, _, default, _ in opts
               if default is REQUIRED and values.get(dest) is REQUIRED]
    if missing:
        sub = parser._subparsers._group_actions[0].choices[command]
        raise UsageError(f"{sub.format_usage()}msped {command}: error: "
                         f"the following arguments are required: {', '.join(missing)}")
    return values


def _existing(path, kind="path"):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{kind} not found: {p}")
    return p


@contextmanager
def _executor(threads):
    n = threads or os.cpu_count() or 1
    if n < 1:
        raise ValueError("--threads must be >= 1")
    if n == 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=n) as ex:
            yield ex


def _emit(opts, record: dict, text: str):
    sys.stdout.write(dumps_json(record) if opts["json"] else text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_eval_inputs(o, ex):
    frames = read_gt_tree(_existing(o["gt"], "ground-truth directory"), o["occlusion_coding"], ex)
    table = {i + 1: f.frame_id for i, f in enumerate(frames)}
    dets_path = _existing(o["dets"], "detection file")
    try:
        dets = parse_detections(dets_path.read_text(encoding="utf-8"), table)
    except FormatError as e:
        raise FormatError(str(e), path=str(dets_path)) from None
    cfg = EvalConfig(match_iou=o["iou"], reasonable=ReasonableConfig(min_height=o["min_height"]))
    return frames, dets, cfg


def cmd_eval(o, ex):
    frames, dets, cfg = _load_eval_inputs(o, ex)
    mr, curve = subset_eval(frames, dets, o["subset"], cfg, ex)
    if o["out_curve"]:
        atomic_write(o["out_curve"], export_curve(curve))
    _emit(o, {"command": "eval", "subset": o["subset"], "mr": mr, "frames": curve.frame_count,
              "points": len(curve.points)},
          f"MR-{o['subset']}: {100 * mr:.2f}%\n")


def cmd_curve(o, ex):
    frames, dets, cfg = _load_eval_inputs(o, ex)
    _, curve = subset_eval(frames, dets, o["subset"], cfg, ex)
    text = export_curve(curve)
    if o["out"]:
        atomic_write(o["out"], text)
        _emit(o, {"command": "curve", "points": len(curve.points), "out": o["out"]},
              f"{len(curve.points)} curve points written to {o['out']}\n")
    elif o["json"]:
        _emit(o, {"command": "curve", "points": [list(p) for p in curve.points]}, "")
    else:
        sys.stdout.write(text)


def cmd_anchors(o, ex):
    frames = read_gt_tree(_existing(o["gt"], "ground-truth directory"), executor=ex)
    heights = [ob.box.h for f in frames for ob in f.objects if ob.label == PERSON and not ob.ignored]
    if not heights:
        raise ValueError("no non-ignored person boxes to derive anchor scales from")
    spec = anchor_spec_from_heights(heights, o["bins"], o["aspect"], o["stride"])
    record = dict(spec.to_record(), samples=len(heights))
    if o["out"]:
        atomic_write(o["out"], dumps_json(record))
    _emit(o, dict(record, command="anchors"),
          "anchor heights: " + " ".join(f"{h:.2f}" for h in spec.heights) +
          f"\naspect ratio {spec.aspect_ratio:g}, stride {spec.stride}, {len(heights)} samples\n")


def cmd_fuse(o, ex):
    path = _existing(o["input"], "input file")
    try:
        ds = read_canonical(path.read_text(encoding="utf-8"))
    except FormatError as e:
        raise FormatError(str(e), path=str(path)) from None
    streams = tuple(s.strip() for s in o["streams"].split(",") if s.strip())
    dets = rescore(ds.detections, streams)
    if o["nms"] is not None:
        dets = nms_per_frame(dets, o["nms"])
    atomic_write(o["out"], write_detections(dets, ds.frame_table()))
    _emit(o, {"command": "fuse", "streams": list(streams), "detections": len(dets)},
          f"fused {len(dets)} detections using streams {','.join(streams)}\n")


def cmd_masks(o, ex):
    frames = read_gt_tree(_existing(o["gt"], "ground-truth directory"), executor=ex)
    out = Path(o["out"])
    totals = {"background": 0, "foreground": 0, "ignore": 0}

    def one(f):
        mask = rasterize_masks(f, o["stride"])
        atomic_write(out / f"{f.frame_id}.pgm", mask_to_pgm(mask))
        return mask.counts()

    for counts in (map if ex is None else ex.map)(one, frames):
        for k, v in counts.items():
            totals[k] += v
    _emit(o, {"command": "masks", "frames": len(frames), "cells": totals},
          f"{len(frames)} masks written to {out} "
          f"(fg {totals['foreground']}, ignore {totals['ignore']}, bg {totals['background']} cells)\n")


def cmd_lint(o, ex):
    frames = read_gt_tree(_existing(o["gt"], "ground-truth directory"), executor=ex)
    report = lint_annotations(frames)
    if o["out"]:
        atomic_write(o["out"], dumps_json(report.to_record()))
    _emit(o, dict(report.to_record(), command="lint"), report.to_text())


def cmd_diff(o, ex):
    old = read_gt_tree(_existing(o["old"], "old annotation directory"), executor=ex)
    new = read_gt_tree(_existing(o["new"], "new annotation directory"), executor=ex)
    d = diff_annotations(old, new, o["identity_iou"])
    if o["out"]:
        atomic_write(o["out"], dumps_json(d.to_record()))
    _emit(o, {"command": "diff", "counts": d.counts(), "only_old": d.only_old,
              "only_new": d.only_new}, d.summary_table())


def cmd_align(o, ex):
    color = read_gt_tree(_existing(o["color"], "color annotation directory"), executor=ex)
    thermal = read_gt_tree(_existing(o["thermal"], "thermal annotation directory"), executor=ex)
    aligned = align_frames(color, thermal, o["iou"], o["reference"])
    write_gt_tree(o["out"], aligned)
    merged = sum(a.label != c.label for fa, fc in zip(aligned, color)
                 for a, c in zip(fa.objects, fc.objects))
    _emit(o, {"command": "align", "frames": len(aligned), "merged": merged},
          f"{len(aligned)} frames aligned, {merged} misaligned pairs merged into ignore regions\n")


def cmd_synth(o, ex):
    cfg = SynthConfig(seed=o["seed"], n_frames=o["frames"], persons_per_frame=o["persons"],
                      day_fraction=o["day_fraction"],
                      detector=DetectorConfig(recall=o["recall"], fppi_target=o["fppi"],
                                              localization_jitter=o["jitter"]))
    ds = synth_all(cfg, ex)
    out = Path(o["out"])
    write_gt_tree(out / "gt", ds.frames)
    atomic_write(out / "dets.csv", write_detections(ds.detections, ds.frame_table()))
    atomic_write(out / "dataset.json", write_canonical(ds))
    n_obj = sum(len(f.objects) for f in ds.frames)
    _emit(o, {"command": "synth", "frames": len(ds.frames), "objects": n_obj,
              "detections": len(ds.detections), "out": str(out)},
          f"{len(ds.frames)} frames, {n_obj} objects, {len(ds.detections)} detections "
          f"written to {out}\n")


def cmd_filter(o, ex):
    frames = read_gt_tree(_existing(o["gt"], "ground-truth directory"), executor=ex)
    cfg = FilterConfig(frame_step=o["step"], min_height=o["min_height"],
                       exclude_truncated=not o["keep_truncated"])
    kept = filter_training_frames(frames, cfg)
    write_gt_tree(o["out"], kept)
    _emit(o, {"command": "filter", "frames_in": len(frames), "frames_out": len(kept)},
          f"kept {len(kept)} of {len(frames)} frames\n")


HANDLERS = {
    "eval": cmd_eval, "curve": cmd_curve, "anchors": cmd_anchors, "fuse": cmd_fuse,
    "masks": cmd_masks, "lint": cmd_lint, "diff": cmd_diff, "align": cmd_align,
    "synth": cmd_synth, "filter": cmd_filter,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError(parser.format_usage() + "msped: error: a subcommand is required")
        given = {k: v for k, v in vars(ns).items() if k != "command"}
        opts = resolve_options(ns.command, given, parser)
        with _executor(opts["threads"]) as ex:
            HANDLERS[ns.command](opts, ex)
        return 0
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 1
    except (FormatError, EvaluationError, ValueError, FileNotFoundError, KeyError) as e:
        sys.stderr.write(f"msped: error: {e}\n")
        return 1
    except Exception as e:  # noqa: BLE001 - exit-code contract
        sys.stderr.write(f"msped: internal error: {type(e).__name__}: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
