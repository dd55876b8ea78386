import math

import numpy as np
import pytest

from conftest import frame, person
from msped.annot_io import Detection, FormatError
from msped.evaluation import (EvalConfig, EvalCurve, EvaluationError, evaluate, export_curve,
                              fixed_score_detections, log_average_mr, match_frame, match_frames,
                              mr_fppi_curve, parse_curve, subset_eval)
from msped.geometry import Box, iou
from msped.harness import DetectorConfig, SynthConfig, synth_all


def d(box, score, fid="set00/V000/I00000"):
    return Detection(fid, Box(*box), score)


def reasonable(o, fa):
    w, h = fa.image_size
    b = o.box
    return (not o.ignored and o.label == "person" and b.h >= 55
            and o.occlusion in ("none", "partial")
            and b.x >= 0 and b.y >= 0 and b.x2 <= w and b.y2 <= h)


def oracle_counts(frames, dets, thr, match_iou=0.5):
    """Independent greedy matcher run from scratch at one threshold."""
    tp = fp = n_gt = 0
    for fa in frames:
        mine = [x for x in dets if x.frame_id == fa.frame_id and x.score >= thr]
        mine = [x for _, x in sorted(enumerate(mine), key=lambda t: (-t[1].score, t[0]))]
        care = [reasonable(g, fa) for g in fa.objects]
        n_gt += sum(care)
        used = [False] * len(care)
        for x in mine:
            best, best_v = None, -1.0
            for j, g in enumerate(fa.objects):
                v = iou(x.box, g.box)
                if care[j] and not used[j] and v >= match_iou and v > best_v:
                    best, best_v = j, v
            if best is not None:
                used[best] = True
                tp += 1
            elif not any(not care[j] and iou(x.box, g.box) >= match_iou
                         for j, g in enumerate(fa.objects)):
                fp += 1
    return tp, fp, n_gt


def test_match_example_tp_fp_ignored():
    fa = frame([person(0, 0, 40, 100), person(200, 0, 40, 100, label="people")])
    dets = [d((1, 0, 40, 100), 0.9), d((0, 0, 40, 100), 0.8), d((200, 0, 40, 100), 0.7),
            d((400, 0, 40, 100), 0.6)]
    m = match_frame(dets, fa)
    assert m.det_status == ("tp", "fp", "ignored", "fp")
    assert m.det_gt == (0, None, 1, None)
    assert m.gt_status == ("matched", "ignored")
    assert m.counts() == {"tp": 1, "fp": 2, "ignored": 1, "matched": 1, "missed": 0}


def test_match_takes_highest_iou_not_first():
    fa = frame([person(0, 0, 40, 100), person(10, 0, 40, 100)])
    m = match_frame([d((10, 0, 40, 100), 0.9)], fa)
    assert m.det_gt == (1,)


def test_match_iou_boundary_inclusive():
    fa = frame([person(0, 0, 40, 100)])
    assert match_frame([d((0, 0, 40, 50), 0.9)], fa, EvalConfig(match_iou=0.5)).det_status == ("tp",)


def test_match_tie_scores_use_input_order():
    fa = frame([person(0, 0, 40, 100)])
    m = match_frame([d((1, 0, 40, 100), 0.5), d((0, 0, 40, 100), 0.5)], fa)
    assert m.det_status == ("tp", "fp")


def test_curve_equals_per_threshold_oracle():
    cfg = SynthConfig(seed=21, n_frames=200, detector=DetectorConfig(localization_jitter=4.0))
    ds = synth_all(cfg)
    curve = mr_fppi_curve(match_frames(ds.frames, ds.detections))
    assert len(curve.points) == len({x.score for x in ds.detections})
    for thr, fppi, miss in curve.points:
        tp, fp, n_gt = oracle_counts(ds.frames, ds.detections, thr)
        assert fppi == fp / 200
        assert miss == (n_gt - tp) / n_gt


def test_curve_monotone_over_seeds():
    for seed in range(20):
        ds = synth_all(SynthConfig(seed=seed, n_frames=50))
        c = mr_fppi_curve(match_frames(ds.frames, ds.detections))
        assert np.all(np.diff(c.thresholds) < 0)
        assert np.all(np.diff(c.fppi) >= 0)
        assert np.all(np.diff(c.miss_rate) <= 0)


def test_perfect_detector_mr_floor():
    ds = synth_all(SynthConfig(seed=1, n_frames=100,
                               detector=DetectorConfig(recall=1.0, fppi_target=0.0)))
    mr, _ = evaluate(ds.frames, ds.detections)
    assert mr <= 1e-9
    assert math.log(mr) == pytest.approx(math.log(1e-10), abs=1e-9)


def test_empty_detector_mr_one():
    ds = synth_all(SynthConfig(seed=1, n_frames=50))
    mr, curve = evaluate(ds.frames, [])
    assert mr == 1.0
    assert curve.points == ((math.inf, 0.0, 1.0),)


def test_constant_miss_rate():
    frames = [frame([person(i * 50, 0, 40, 100) for i in range(4)], f"v/{k}") for k in range(10)]
    dets = [d((0, 0, 40, 100), 0.9, f"v/{k}") for k in range(10)]
    mr, _ = evaluate(frames, dets)
    assert abs(mr - 0.75) < 1e-12


def test_log_average_hand_computed():
    curve = EvalCurve(((0.9, 0.0, 0.8), (0.5, 0.05, 0.5), (0.1, 0.5, 0.2)), 100)
    refs = np.logspace(-2, 0, 9)
    expected = [0.8 if r < 0.05 else 0.5 if r < 0.5 else 0.2 for r in refs]
    got = log_average_mr(curve)
    assert abs(got - math.exp(np.mean(np.log(expected)))) < 1e-12


def test_human_baseline_single_point():
    frames = [frame([person(0, 0, 40, 100), person(100, 0, 40, 100)], f"v/{k}")
              for k in range(4)]
    dets = fixed_score_detections([d((0, 0, 40, 100), 0.3, f"v/{k}") for k in range(4)]
                                  + [d((300, 0, 40, 100), 0.2, "v/0")])
    _, curve = evaluate(frames, dets)
    assert curve.points == ((1.0, 0.25, 0.5),)


def test_order_independence():
    ds = synth_all(SynthConfig(seed=4, n_frames=60))
    rng = np.random.default_rng(0)
    shuffled = [ds.detections[i] for i in rng.permutation(len(ds.detections))]
    assert evaluate(ds.frames, shuffled)[1] == evaluate(ds.frames, ds.detections)[1]


def test_subset_counts_add_up():
    ds = synth_all(SynthConfig(seed=9, n_frames=80))
    totals = {}
    for sub in ("day", "night"):
        _, c = subset_eval(ds.frames, ds.detections, sub)
        totals[sub] = c.frame_count
    assert totals["day"] + totals["night"] == 80
    ms = match_frames(ds.frames, ds.detections)
    day = [m for m, f in zip(ms, ds.frames) if f.time_of_day == "day"]
    night = [m for m, f in zip(ms, ds.frames) if f.time_of_day == "night"]
    for key in ("tp", "fp", "matched"):
        assert sum(m.counts()[key] for m in ms) == \
            sum(m.counts()[key] for m in day) + sum(m.counts()[key] for m in night)


def test_subset_errors():
    day_only = [frame([person(0, 0, 40, 100)], "v/0")]
    with pytest.raises(EvaluationError):
        subset_eval(day_only, [], "night")
    with pytest.raises(ValueError):
        subset_eval(day_only, [], "dusk")
    with pytest.raises(EvaluationError, match="unknown frame"):
        subset_eval(day_only, [d((0, 0, 1, 1), 0.5, "v/9")])
    with pytest.raises(EvaluationError, match="no evaluated"):
        evaluate([frame([person(0, 0, 40, 20)], "v/0")], [])


def test_curve_csv_round_trip():
    ds = synth_all(SynthConfig(seed=2, n_frames=40))
    _, curve = evaluate(ds.frames, ds.detections)
    text = export_curve(curve)
    assert text.splitlines()[0] == "threshold,fppi,miss_rate"
    assert parse_curve(text, 40) == curve
    empty = evaluate(ds.frames, [])[1]
    assert parse_curve(export_curve(empty), 40) == empty
    with pytest.raises(FormatError):
        parse_curve("a,b,c\n")
