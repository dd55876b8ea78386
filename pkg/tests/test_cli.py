import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import pytest

from msped.annot_io import read_gt_tree, write_gt_tree
from msped.cli import main
from msped.geometry import Box


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--frames", "60", "--seed", "7"]) == 0
    return out


def test_no_subcommand_is_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage:" in err


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "eval")
    assert code == 1 and "--gt" in err and "usage:" in err


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "lint", "--gt", ".", "--bogus")
    assert code == 1 and "unrecognized" in err


def test_nonexistent_path(capsys, tmp_path):
    code, _, err = run(capsys, "lint", "--gt", tmp_path / "nope")
    assert code == 1 and "not found" in err


def test_version():
    r = subprocess.run([sys.executable, "-m", "msped.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.strip() == "msped 0.1.0 (format version 1, bbGt v3)"


def test_synth_layout(synth_dir):
    assert (synth_dir / "gt" / "frames.csv").is_file()
    assert (synth_dir / "dets.csv").is_file()
    assert (synth_dir / "dataset.json").is_file()
    assert len(read_gt_tree(synth_dir / "gt")) == 60


def test_eval_text_and_json(capsys, synth_dir):
    code, out, _ = run(capsys, "eval", "--gt", synth_dir / "gt", "--dets", synth_dir / "dets.csv")
    assert code == 0 and out.startswith("MR-all: ") and out.rstrip().endswith("%")
    code, out, _ = run(capsys, "eval", "--gt", synth_dir / "gt", "--dets", synth_dir / "dets.csv",
                       "--subset", "night", "--json")
    rec = json.loads(out)
    assert code == 0 and rec["subset"] == "night" and 0 <= rec["mr"] <= 1


def test_eval_bad_subset_and_bad_csv(capsys, synth_dir, tmp_path):
    code, _, _ = run(capsys, "eval", "--gt", synth_dir / "gt", "--dets", synth_dir / "dets.csv",
                     "--subset", "dusk")
    assert code == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3,4,5,7\n")
    code, _, err = run(capsys, "eval", "--gt", synth_dir / "gt", "--dets", bad)
    assert code == 1 and "bad.csv" in err


def test_config_precedence(capsys, synth_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gt": str(synth_dir / "gt"), "dets": str(synth_dir / "dets.csv"),
                               "eval": {"subset": "day"}}))
    code, out, _ = run(capsys, "eval", "--config", cfg)
    assert code == 0 and out.startswith("MR-day")
    code, out, _ = run(capsys, "eval", "--config", cfg, "--subset", "night")
    assert code == 0 and out.startswith("MR-night")
    cfg.write_text(json.dumps({"gt": ".", "dets": ".", "colour": 1}))
    code, _, err = run(capsys, "eval", "--config", cfg)
    assert code == 1 and "colour" in err
    cfg.write_text(json.dumps({"out": str(tmp_path / "s"), "frames": "three"}))
    assert run(capsys, "synth", "--config", cfg)[0] == 1
    assert run(capsys, "eval", "--config", tmp_path / "missing.json")[0] == 1


def test_config_values_are_typed(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "s"), "frames": "3"}))
    code, out, _ = run(capsys, "synth", "--config", cfg, "--json")
    assert code == 0 and json.loads(out)["frames"] == 3


def test_fuse_reproduces_scores(capsys, synth_dir, tmp_path):
    out = tmp_path / "fused.csv"
    code, _, _ = run(capsys, "fuse", "--in", synth_dir / "dataset.json", "--out", out)
    assert code == 0
    orig = [l.split(",") for l in (synth_dir / "dets.csv").read_text().splitlines()]
    fused = [l.split(",") for l in out.read_text().splitlines()]
    assert [r[:5] for r in fused] == [r[:5] for r in orig]
    assert all(abs(float(a[5]) - float(b[5])) < 1e-9 for a, b in zip(fused, orig))
    code, _, _ = run(capsys, "fuse", "--in", synth_dir / "dataset.json", "--out", out,
                     "--streams", "merged,depth")
    assert code == 1


def make_inputs(base: Path):
    """A synthetic tree plus a shifted copy standing in for thermal labels."""
    assert main(["synth", "--out", str(base / "synth"), "--frames", "40", "--seed", "3",
                 "--threads", "1"]) == 0
    frames = read_gt_tree(base / "synth" / "gt")
    thermal = [replace(f, objects=tuple(
        replace(o, box=Box(o.box.x + (k % 3) * 0.3 * o.box.w, o.box.y, o.box.w, o.box.h))
        for k, o in enumerate(f.objects))) for f in frames]
    write_gt_tree(base / "thermal", thermal)


def every_command(base: Path, threads: int):
    gt, s = base / "synth" / "gt", base / "synth"
    o = base / f"out{threads}"
    t = ["--threads", str(threads)]
    return [
        ["synth", "--out", o / "synth", "--frames", "40", "--seed", "3"],
        ["eval", "--gt", gt, "--dets", s / "dets.csv", "--out-curve", o / "curve_eval.csv"],
        ["curve", "--gt", gt, "--dets", s / "dets.csv", "--out", o / "curve.csv"],
        ["anchors", "--gt", gt, "--out", o / "anchors.json"],
        ["fuse", "--in", s / "dataset.json", "--streams", "mpn,merged", "--nms", "0.5",
         "--out", o / "fused.csv"],
        ["masks", "--gt", gt, "--out", o / "masks"],
        ["lint", "--gt", gt, "--out", o / "lint.json"],
        ["align", "--color", gt, "--thermal", base / "thermal", "--out", o / "aligned"],
        ["diff", "--old", gt, "--new", o / "aligned", "--out", o / "diff.json"],
        ["filter", "--gt", gt, "--out", o / "filtered"],
    ], t, o


def snapshot(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def run_all(base: Path, threads: int, capsys):
    cmds, t, o = every_command(base, threads)
    stdout = []
    for argv in cmds:
        code, out, err = run(capsys, *argv, *t)
        assert code == 0, (argv, err)
        stdout.append(out.replace(str(o), "<OUT>"))
    return snapshot(o), stdout


def test_every_subcommand_is_deterministic_across_threads(tmp_path, capsys):
    make_inputs(tmp_path)
    capsys.readouterr()
    first = run_all(tmp_path, 1, capsys)
    for threads in (1, 4):
        again = run_all(tmp_path, threads, capsys)
        assert again == first
    files, _ = first
    assert {"curve.csv", "curve_eval.csv", "anchors.json", "fused.csv", "lint.json",
            "diff.json", "synth/dets.csv", "synth/dataset.json"} <= set(files)
    assert any(k.startswith("masks/") and k.endswith(".pgm") for k in files)
    assert any(k.startswith("aligned/") for k in files)
    assert any(k.startswith("filtered/") for k in files)
    diff = json.loads(files["diff.json"])
    # the merged boxes also cover the thermal box, which the color-only old set
    # lacks, so they are not unions of old boxes and count as localization
    assert diff["counts"]["localization"] > 0 and diff["counts"]["alignment"] == 0


def test_json_outputs_parse(tmp_path, capsys):
    make_inputs(tmp_path)
    capsys.readouterr()
    cmds, t, _ = every_command(tmp_path, 2)
    for argv in cmds:
        code, out, _ = run(capsys, *argv, *t, "--json")
        assert code == 0
        assert isinstance(json.loads(out), dict)
