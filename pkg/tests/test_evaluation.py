from __future__ import annotations

import numpy as np
import pytest

from clickmine.evaluation import (
    EvalConfig,
    MetricRow,
    VideoData,
    compare_algorithms,
    default_b_grid,
    default_w_grid,
    evaluate_video,
    evaluate_videos,
    improvement_report,
    stratified_folds,
    tune,
)
from clickmine.ingest import UVPair
from clickmine.seeding import rng_for

from conftest import click


def make_pairs(n, signal_rate=1.0, length=300.0, seed=0):
    """Users who either watch the 90..120s block (label 1) or skip it (0)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        visits = bool(rng.random() < 0.5)
        label = int(visits) if rng.random() < signal_rate else 1 - int(visits)
        if visits:
            clicks = [
                click("play", 80.0, 0.0, user=f"u{i}"),
                click("pause", 130.0, 50.0, "paused", user=f"u{i}"),
            ]
        else:
            clicks = [
                click("play", 150.0, 0.0, user=f"u{i}"),
                click("pause", 200.0, 50.0, "paused", user=f"u{i}"),
            ]
        pairs.append(UVPair(f"u{i}", "v1", clicks, cfa=label))
    return pairs


SMALL_CFG = EvalConfig(
    iterations=2,
    folds=5,
    w_grid=(15.0, 30.0),
    b_grid=(0.0, 2.0**-10),
    min_class_samples=20,
    seed=9,
)


# ------------------------------------------------------------------ grids


def test_default_grids_match_published_cardinality():
    assert len(default_w_grid()) == 43
    assert len(default_b_grid()) == 32
    assert EvalConfig().grid_size == 1376


def test_default_grid_contents():
    w = default_w_grid()
    assert w[:4] == (5.0, 10.0, 15.0, 20.0)
    assert w[4] == 30.0 and w[-1] == 600.0
    b = default_b_grid()
    assert b[0] == 0.0 and b[1] == 2.0**-60 and b[-1] == 1.0


# ------------------------------------------------------------------ folds


def test_balanced_folds_exactly_twenty_per_class():
    labels = np.array([1] * 100 + [0] * 100)
    folds = stratified_folds(labels, 5, np.random.default_rng(0))
    for fold in folds:
        assert (labels[fold] == 1).sum() == 20
        assert (labels[fold] == 0).sum() == 20


def test_remainder_distributed_round_robin():
    labels = np.array([1] * 101 + [0] * 100)
    folds = stratified_folds(labels, 5, np.random.default_rng(0))
    ones = sorted((labels[f] == 1).sum() for f in folds)
    assert ones == [20, 20, 20, 20, 21]


def test_folds_disjoint_and_covering():
    labels = np.array([0, 1] * 53)
    folds = stratified_folds(labels, 5, np.random.default_rng(3))
    joined = np.concatenate(folds)
    assert len(joined) == len(labels)
    assert len(np.unique(joined)) == len(labels)


def test_folds_deterministic_by_seed():
    labels = np.array([0, 1] * 50)
    a = stratified_folds(labels, 5, rng_for(1, 2, 3))
    b = stratified_folds(labels, 5, rng_for(1, 2, 3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_undersampled_video_excluded():
    pairs = make_pairs(150)  # ~75 per class, below the 100 floor
    data = VideoData("v1", 0, pairs, 300.0)
    result = evaluate_video(data, "dp", EvalConfig(min_class_samples=100))
    assert result.excluded
    assert "insufficient samples" in result.reason


# ------------------------------------------------------------------ metrics


def test_metric_identities():
    row = MetricRow(tp=10, fp=5, tn=20, fn=15)
    assert row.total == 50
    assert row.accuracy == pytest.approx(0.6)
    assert row.precision == pytest.approx(10 / 15)
    assert row.recall == pytest.approx(0.4)
    p, r = row.precision, row.recall
    assert row.f1 == pytest.approx(2 * p * r / (p + r))
    m = min(p, r)
    assert row.f1 <= 2 * m / (1 + m) + 1e-12


def test_metric_zero_denominators():
    row = MetricRow(tp=0, fp=0, tn=5, fn=5)
    assert row.precision == 0.0 and row.f1 == 0.0


# ------------------------------------------------------------------ tuning


def test_tune_evaluates_full_grid_and_prefers_smaller_params():
    pairs = make_pairs(200, seed=1)
    data = VideoData("v1", 0, pairs, 300.0)
    folds = stratified_folds(data.labels, 5, rng_for(0, 1))
    result = tune(data, folds[:-1], "dp", SMALL_CFG, iteration=0)
    assert result.evaluated == len(SMALL_CFG.w_grid) * len(SMALL_CFG.b_grid)
    assert result.w in SMALL_CFG.w_grid
    assert result.b in SMALL_CFG.b_grid


def test_tune_tie_break_toward_smaller_width_and_bias():
    # Perfectly separable signal: every grid cell scores 1.0, so the
    # declared tie-break (smaller width, then smaller bias) decides.
    pairs = make_pairs(100, signal_rate=1.0, seed=8)
    data = VideoData("v1", 5, pairs, 300.0)
    folds = stratified_folds(data.labels, 5, rng_for(0, 2))
    cfg = EvalConfig(w_grid=(15.0, 30.0), b_grid=(0.0, 2.0**-60), seed=3)
    result = tune(data, folds[:-1], "dp", cfg, iteration=0)
    assert result.mean_accuracy == 1.0
    assert (result.w, result.b) == (15.0, 0.0)


def test_tune_never_touches_heldout_fold():
    pairs = make_pairs(200, seed=2)
    poisoned = [UVPair(p.user_id, p.video_id, p.clicks, p.cfa) for p in pairs]
    data = VideoData("v1", 1, pairs, 300.0)
    folds = stratified_folds(data.labels, 5, rng_for(4, 4))
    heldout = set(folds[-1].tolist())
    # Corrupt the held-out trajectories only; tuning must not notice.
    for idx in heldout:
        poisoned[idx] = UVPair(
            pairs[idx].user_id,
            pairs[idx].video_id,
            [click("play", 290.0, 0.0, user=pairs[idx].user_id)],
            pairs[idx].cfa,
        )
    data_poisoned = VideoData("v1", 1, poisoned, 300.0)
    a = tune(data, folds[:-1], "dp", SMALL_CFG, iteration=0)
    b = tune(data_poisoned, folds[:-1], "dp", SMALL_CFG, iteration=0)
    assert (a.w, a.b, a.mean_accuracy) == (b.w, b.b, b.mean_accuracy)


def test_tune_fallback_flagged_when_constraint_unsatisfiable():
    pairs = make_pairs(120, signal_rate=0.5, seed=3)  # pure noise labels
    data = VideoData("v1", 2, pairs, 300.0)
    folds = stratified_folds(data.labels, 5, rng_for(4, 5))
    cfg = EvalConfig(
        w_grid=(15.0,), b_grid=(0.0,), constraint_floor=0.999, seed=1
    )
    result = tune(data, folds[:-1], "dp", cfg, iteration=0)
    assert result.fallback


# ------------------------------------------------------------------ evaluation


def test_skr_near_half_on_balanced_video():
    pairs = make_pairs(300, seed=4)
    data = VideoData("v1", 3, pairs, 300.0)
    cfg = EvalConfig(iterations=6, min_class_samples=50, seed=2)
    result = evaluate_video(data, "skr", cfg)
    acc, _ = result.mean_sd("accuracy")
    assert acc == pytest.approx(0.5, abs=0.08)


def test_dp_learns_deterministic_rule():
    pairs = make_pairs(260, signal_rate=1.0, seed=5)
    data = VideoData("v1", 4, pairs, 300.0)
    cfg = EvalConfig(
        iterations=3, w_grid=(15.0, 30.0), b_grid=(0.0,),
        min_class_samples=50, seed=6,
    )
    result = evaluate_video(data, "dp", cfg)
    acc, _ = result.mean_sd("accuracy")
    assert acc >= 0.95


def test_identical_seed_identical_report():
    pairs = make_pairs(150, seed=6)
    cfg = EvalConfig(
        iterations=2, w_grid=(15.0, 30.0), b_grid=(0.0, 0.25),
        min_class_samples=30, seed=11,
    )
    a = evaluate_video(VideoData("v1", 7, pairs, 300.0), "dt", cfg)
    b = evaluate_video(VideoData("v1", 7, pairs, 300.0), "dt", cfg)
    assert [it.metrics for it in a.iterations] == [it.metrics for it in b.iterations]
    assert [it.w for it in a.iterations] == [it.w for it in b.iterations]


def test_parallel_jobs_do_not_change_output():
    tasks = []
    for v in range(2):
        pairs = [
            UVPair(p.user_id, f"v{v}", p.clicks, p.cfa)
            for p in make_pairs(140, seed=7 + v)
        ]
        tasks.append((f"v{v}", v, pairs, 300.0))
    cfg = EvalConfig(
        iterations=2, w_grid=(15.0, 30.0), b_grid=(0.0,),
        min_class_samples=30, seed=13,
    )
    serial = evaluate_videos(tasks, ("skr", "dp"), cfg, jobs=1)
    parallel = evaluate_videos(tasks, ("skr", "dp"), cfg, jobs=2)
    assert [e.summary() for e in serial] == [e.summary() for e in parallel]


# ------------------------------------------------------------------ comparison


def test_compare_identical_vectors():
    xs = [0.5, 0.6, 0.7, 0.55]
    assert compare_algorithms(xs, xs).p_value == 1.0


def test_compare_disjoint_vectors_significant():
    a = [0.8 + i / 100 for i in range(10)]
    b = [0.5 + i / 100 for i in range(10)]
    assert compare_algorithms(a, b).p_value < 1e-3


def test_compare_requires_three_videos():
    with pytest.raises(ValueError, match="insufficient samples"):
        compare_algorithms([0.5, 0.6], [0.7, 0.8, 0.9])


def _fake_eval(video, algo, acc):
    from clickmine.evaluation import IterationResult, VideoEvaluation

    out = VideoEvaluation(video, algo)
    n = 100
    tp = int(round(acc * n))
    out.iterations.append(
        IterationResult(MetricRow(tp=tp, fp=n - tp, tn=0, fn=0), 15.0, 0.0)
    )
    return out


def test_improvement_report_zero_for_identical_and_na_for_zero_base():
    evs = [
        _fake_eval("v1", "skr", 0.5),
        _fake_eval("v1", "dp", 0.5),
        _fake_eval("v2", "skr", 0.0),
        _fake_eval("v2", "dp", 0.6),
        _fake_eval("v3", "dp", 0.9),  # missing baseline: skipped
    ]
    rows = improvement_report(evs)
    by_video = {(r["video"], r["algo"]): r for r in rows}
    assert by_video[("v1", "dp")]["acc_pct"] == pytest.approx(0.0)
    assert by_video[("v2", "dp")]["acc_pct"] is None
    assert ("v3", "dp") not in by_video


def test_improvement_report_twelve_percent_shape():
    evs = [_fake_eval("v1", "skr", 0.5), _fake_eval("v1", "dp", 0.56)]
    rows = improvement_report(evs)
    assert rows[0]["acc_pct"] == pytest.approx(12.0, abs=1e-9)
