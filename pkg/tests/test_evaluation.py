import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shpose.geometry import ImageBuffer
from shpose.heatmap import JOINT_INDEX, HeatmapError, KeypointSet
from shpose.model import ModelConfig, build_model
from shpose.evaluation import (
    DEFAULT_ALPHAS,
    EvaluationError,
    MissingWeightsError,
    accuracy_curve,
    benchmark_latency,
    compare_variants,
    evaluate_keypoints,
    group_accuracy,
    pckh,
    write_curve_csv,
    write_variant_csv,
)

TINY = ModelConfig(num_stacks=1, channels=8, input_side=32, heatmap_side=8)


def kps(xy, ref=10.0, visible=None):
    xy = np.asarray(xy, dtype=float)
    vis = np.ones(7, bool) if visible is None else np.asarray(visible)
    return KeypointSet(xy, vis, ref)


def test_threshold_is_inclusive():
    gt = kps(np.zeros((7, 2)))
    pred = kps(np.tile([3.0, 4.0], (7, 1)))  # distance 5
    hits, valid = pckh(pred, gt, 0.5)
    assert hits.all() and valid.all()
    hits, _ = pckh(pred, gt, 0.49)
    assert not hits.any()


def test_invisible_joints_do_not_count():
    vis = np.ones(7, bool)
    vis[JOINT_INDEX["neck"]] = False
    gt = kps(np.zeros((7, 2)), visible=vis)
    hits, valid = pckh(kps(np.zeros((7, 2))), gt, 0.1)
    assert not valid[JOINT_INDEX["neck"]] and not hits[JOINT_INDEX["neck"]]
    assert np.isnan(group_accuracy(hits, valid)["neck"])


def test_bad_reference_length():
    with pytest.raises(HeatmapError):
        kps(np.zeros((7, 2)), ref=0.0)


def random_pairs(seed, n=20):
    rng = np.random.default_rng(seed)
    gts = [kps(rng.uniform(0, 100, (7, 2)), rng.uniform(5, 40)) for _ in range(n)]
    preds = [kps(g.xy + rng.normal(scale=8.0, size=(7, 2))) for g in gts]
    return preds, gts


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_curve_is_monotone_in_alpha(seed):
    preds, gts = random_pairs(seed)
    curve = accuracy_curve(preds, gts, np.linspace(0, 1, 21))
    for (_, lo), (_, hi) in zip(curve, curve[1:]):
        assert all(hi[g] >= lo[g] for g in lo)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
@settings(max_examples=30, deadline=None)
def test_scale_invariance(seed, k):
    preds, gts = random_pairs(seed)
    scaled_p = [kps(p.xy * k) for p in preds]
    scaled_g = [kps(g.xy * k, g.reference_length * k) for g in gts]
    assert accuracy_curve(preds, gts) == accuracy_curve(scaled_p, scaled_g)


def test_self_evaluation_is_perfect():
    _, gts = random_pairs(0)
    report = evaluate_keypoints(gts, gts)
    assert report.pckh == {"shoulder": 1.0, "elbow": 1.0, "wrist": 1.0, "neck": 1.0}
    assert all(v == 1.0 for _, acc in report.curve for v in acc.values())


def test_hand_counted_fixture():
    # joint order: r_wrist, r_elbow, r_shoulder, neck, l_shoulder, l_elbow, l_wrist
    gt = [kps(np.zeros((7, 2)), ref=10.0) for _ in range(3)]
    offsets = [
        [0, 6, 0, 0, 2, 0, 9],   # r_elbow and l_wrist miss at 0.5
        [5, 0, 5.1, 0, 0, 7, 0],  # r_shoulder and l_elbow miss, r_wrist on the boundary
        [0, 0, 0, 6, 0, 0, 0],   # neck misses
    ]
    preds = [kps(np.column_stack([o, np.zeros(7)])) for o in offsets]
    report = evaluate_keypoints(preds, gt, alphas=[0.5])
    # shoulder 5/6, elbow 4/6, wrist 5/6, neck 2/3
    assert report.pckh == pytest.approx({"shoulder": 5 / 6, "elbow": 4 / 6, "wrist": 5 / 6, "neck": 2 / 3})


def test_curve_length_mismatch():
    preds, gts = random_pairs(1)
    with pytest.raises(EvaluationError):
        accuracy_curve(preds[:-1], gts)
    with pytest.raises(EvaluationError):
        accuracy_curve([], [])


def test_default_alphas():
    assert DEFAULT_ALPHAS[0] == 0.0 and DEFAULT_ALPHAS[-1] == 0.5 and len(DEFAULT_ALPHAS) == 11


def test_curve_csv(tmp_path):
    preds, gts = random_pairs(2)
    report = evaluate_keypoints(preds, gts)
    write_curve_csv(tmp_path / "c.csv", report.curve)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["alpha", "shoulder", "elbow", "wrist", "neck"]
    assert len(rows) == 12 and float(rows[-1][0]) == 0.5


def test_benchmark_rejects_too_few_reps():
    model = build_model(TINY, seed=0)
    img = ImageBuffer(np.zeros((32, 32, 3)))
    with pytest.raises(EvaluationError):
        benchmark_latency(model, [img], warmup=2, reps=5)
    with pytest.raises(EvaluationError):
        benchmark_latency(model, [], reps=10)
    with pytest.raises(EvaluationError):
        benchmark_latency(model, [img], warmup=12, reps=10)


def test_benchmark_stats():
    model = build_model(TINY, seed=0)
    stats = benchmark_latency(model, [ImageBuffer(np.zeros((32, 32, 3)))], warmup=1, reps=10)
    assert stats.samples == 10
    assert 0 < stats.median_ms <= stats.p95_ms
    assert stats.mean_ms > 0


def test_compare_variants_needs_grid_and_weights():
    with pytest.raises(EvaluationError):
        compare_variants([])
    with pytest.raises(MissingWeightsError):
        compare_variants([TINY])


def test_compare_variants_random_init(tmp_path):
    rows = compare_variants([("a", TINY), ("b", TINY.replace(num_stacks=2))], random_init=True, reps=10)
    assert [r.name for r in rows] == ["a", "b"]
    write_variant_csv(tmp_path / "v.csv", rows)
    lines = list(csv.reader(open(tmp_path / "v.csv")))
    assert lines[0] == ["model", "shoulder", "elbow", "wrist", "neck", "time_ms"]
    assert lines[1][0] == "a" and lines[1][1] == "" and float(lines[1][5]) > 0


def test_benchmark_grid_interleaves_rounds():
    from shpose.evaluation import benchmark_grid

    models = {"a": build_model(TINY, seed=0), "b": build_model(TINY.replace(num_stacks=2), seed=0)}
    img = ImageBuffer(np.zeros((32, 32, 3)))
    stats = benchmark_grid(models, [img, img], warmup=1, reps=10, rounds=3)
    assert list(stats) == ["a", "b"]
    assert all(s.samples == 60 for s in stats.values())
    with pytest.raises(EvaluationError):
        benchmark_grid(models, [img], rounds=0)


def test_compare_variants_rejects_mixed_inputs_and_duplicates():
    other = ModelConfig(num_stacks=1, channels=8, input_side=64, heatmap_side=16)
    with pytest.raises(EvaluationError):
        compare_variants([TINY, other], random_init=True)
    with pytest.raises(EvaluationError):
        compare_variants([TINY, TINY], random_init=True)
