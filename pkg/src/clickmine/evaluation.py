"""Per-video train/test protocol with nested parameter tuning.

Each video is evaluated over N iterations: re-fold into K stratified folds,
hold the last fold out, tune the interval width and decision bias on the
remaining folds by inner cross-validation over the full (width, bias) grid,
train the tuned model on all training folds, and score the held-out fold.
Tuning maximizes mean inner accuracy subject to both classes keeping at
least a floor of correct predictions.  All randomness derives from the run
seed plus structural keys, so results are identical across repeated runs
and across any number of workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from clickmine.denoise import DenoiseConfig
from clickmine.ingest import UVPair
from clickmine.models import (
    CTModel,
    DPModel,
    DTModel,
    PackedCorpus,
    SKRModel,
    decide_batch,
    train_ct,
    train_dp,
    train_dt,
    train_skr,
)
from clickmine.positions import encode_positions, n_intervals
from clickmine.seeding import rng_for
from clickmine.stats import TestResult, wrs_test

log = logging.getLogger("clickmine")

__all__ = [
    "EvalConfig",
    "MetricRow",
    "IterationResult",
    "VideoEvaluation",
    "default_w_grid",
    "default_b_grid",
    "stratified_folds",
    "tune",
    "evaluate_video",
    "evaluate_videos",
    "compare_algorithms",
    "improvement_report",
    "VideoData",
]

ALGORITHMS = ("skr", "dp", "dt", "ct")
_ALGO_INDEX = {algo: i for i, algo in enumerate(ALGORITHMS)}

# Namespace tags keeping RNG streams for distinct purposes disjoint.
_NS_FOLDS = 201
_NS_TUNE = 202
_NS_TEST = 203


def default_w_grid() -> tuple[float, ...]:
    """Interval widths: 5..20 by 5, then 30..600 by 15 (43 values)."""
    return tuple(float(w) for w in (5, 10, 15, 20)) + tuple(
        float(w) for w in range(30, 601, 15)
    )


def default_b_grid() -> tuple[float, ...]:
    """Decision biases: 0 plus powers 2^-60, 2^-58, ..., 2^0 (32 values)."""
    return (0.0,) + tuple(2.0**e for e in range(-60, 1, 2))


@dataclass(frozen=True)
class EvalConfig:
    iterations: int = 10
    folds: int = 5
    w_grid: tuple[float, ...] = field(default_factory=default_w_grid)
    b_grid: tuple[float, ...] = field(default_factory=default_b_grid)
    min_class_samples: int = 100
    constraint_floor: float = 0.25
    alpha: float = 0.5
    seed: int = 0
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)

    @property
    def grid_size(self) -> int:
        return len(self.w_grid) * len(self.b_grid)


@dataclass(frozen=True)
class MetricRow:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_labels(cls, y_true: np.ndarray, y_pred: np.ndarray) -> "MetricRow":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        return cls(
            tp=int(((y_true == 1) & (y_pred == 1)).sum()),
            fp=int(((y_true == 0) & (y_pred == 1)).sum()),
            tn=int(((y_true == 0) & (y_pred == 0)).sum()),
            fn=int(((y_true == 1) & (y_pred == 0)).sum()),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if (self.tn + self.fp) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) else 0.0


@dataclass
class IterationResult:
    metrics: MetricRow
    w: float | None
    b: float | None
    tuning_fallback: bool = False


@dataclass
class VideoEvaluation:
    video_id: str
    algo: str
    excluded: bool = False
    reason: str | None = None
    iterations: list[IterationResult] = field(default_factory=list)

    def _series(self, attr: str) -> np.ndarray:
        return np.array([getattr(it.metrics, attr) for it in self.iterations])

    def mean_sd(self, attr: str) -> tuple[float, float]:
        xs = self._series(attr)
        return float(xs.mean()), float(xs.std(ddof=1)) if len(xs) > 1 else 0.0

    def param_mean_sd(self, name: str) -> tuple[float, float] | None:
        values = [getattr(it, name) for it in self.iterations]
        if any(v is None for v in values) or not values:
            return None
        xs = np.array(values, dtype=np.float64)
        return float(xs.mean()), float(xs.std(ddof=1)) if len(xs) > 1 else 0.0

    def summary(self) -> dict:
        if self.excluded:
            return {
                "video": self.video_id,
                "algo": self.algo,
                "excluded": True,
                "reason": self.reason,
            }
        acc = self.mean_sd("accuracy")
        f1 = self.mean_sd("f1")
        w = self.param_mean_sd("w")
        b = self.param_mean_sd("b")
        return {
            "video": self.video_id,
            "algo": self.algo,
            "acc_mean": acc[0],
            "acc_sd": acc[1],
            "f1_mean": f1[0],
            "f1_sd": f1[1],
            "w_mean": None if w is None else w[0],
            "w_sd": None if w is None else w[1],
            "b_mean": None if b is None else b[0],
            "b_sd": None if b is None else b[1],
        }


def stratified_folds(
    labels: np.ndarray, k: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """K disjoint folds with per-class counts differing by at most one.

    Each class is shuffled and dealt round-robin; disjointness and coverage
    are asserted on every call.
    """
    labels = np.asarray(labels)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        rng.shuffle(members)
        for pos, idx in enumerate(members):
            folds[pos % k].append(int(idx))
    out = [np.array(sorted(f), dtype=np.int64) for f in folds]

    all_ids = np.concatenate(out) if out else np.array([], dtype=np.int64)
    assert len(np.unique(all_ids)) == len(all_ids), "folds overlap"
    assert len(all_ids) == len(labels), "folds do not cover the corpus"
    for cls in (0, 1):
        sizes = [int((labels[f] == cls).sum()) for f in out]
        assert max(sizes) - min(sizes) <= 1, f"class {cls} unbalanced across folds"
    return out


class VideoData:
    """One video's labeled pairs, encoded lazily at each requested width."""

    def __init__(
        self,
        video_id: str,
        video_key: int,
        pairs: list[UVPair],
        video_length_s: float,
        denoise: DenoiseConfig = DenoiseConfig(),
    ) -> None:
        if any(p.cfa is None for p in pairs):
            raise ValueError("evaluation requires labeled pairs")
        self.video_id = video_id
        self.video_key = video_key
        self.pairs = pairs
        self.video_length_s = video_length_s
        self.denoise = denoise
        self.labels = np.array([p.cfa for p in pairs], dtype=np.int64)
        self._cache: dict[float, PackedCorpus] = {}

    def corpus(self, width: float) -> PackedCorpus:
        if width not in self._cache:
            if width > self.video_length_s:
                log.debug(
                    "width %.3gs exceeds video %s length %.3gs; single interval",
                    width,
                    self.video_id,
                    self.video_length_s,
                )
            n_slots = n_intervals(self.video_length_s, width) + 1
            sequences = [
                encode_positions(
                    p, width, self.video_length_s, self.denoise,
                    warn_single_interval=False,
                )
                for p in self.pairs
            ]
            self._cache[width] = PackedCorpus(sequences, n_slots)
        return self._cache[width]


def _train(algo: str, corpus: PackedCorpus, ids: np.ndarray, alpha: float):
    if algo == "dp":
        return train_dp(corpus, alpha=alpha, ids=ids)
    if algo == "dt":
        return train_dt(corpus, alpha=alpha, ids=ids)
    if algo == "ct":
        return train_ct(corpus, ids=ids)
    if algo == "skr":
        return train_skr(corpus, ids=ids)
    raise ValueError(f"unknown algorithm {algo!r}")


@dataclass
class TuneResult:
    w: float
    b: float
    mean_accuracy: float
    fallback: bool
    evaluated: int


def tune(
    data: VideoData,
    train_folds: list[np.ndarray],
    algo: str,
    cfg: EvalConfig,
    iteration: int,
) -> TuneResult:
    """Pick (width, bias) by inner cross-validation over the full grid.

    Each training fold takes one turn as the inner validation set.  A grid
    pair survives when its pooled inner predictions keep at least the
    constraint floor of both true negatives and true positives; among
    survivors the highest mean inner accuracy wins, with ties broken toward
    the smaller width and then the smaller bias.  If nothing survives the
    constraint, the unconstrained maximum is returned, flagged.
    """
    n_w, n_b = len(cfg.w_grid), len(cfg.b_grid)
    rounds = len(train_folds)
    acc = np.zeros((n_w, n_b, rounds))
    pooled = np.zeros((n_w, n_b, 4), dtype=np.int64)  # tp, fp, tn, fn

    for k in range(rounds):
        val_ids = train_folds[k]
        fit_ids = np.concatenate([f for j, f in enumerate(train_folds) if j != k])
        y_val = data.labels[val_ids]
        for wi, w in enumerate(cfg.w_grid):
            corpus = data.corpus(w)
            model = _train(algo, corpus, fit_ids, cfg.alpha)
            loglik = model.batch_log_likelihood(corpus, val_ids)
            rng = rng_for(cfg.seed, _NS_TUNE, data.video_key, iteration,
                          _ALGO_INDEX[algo], k, wi)
            for bi, b in enumerate(cfg.b_grid):
                y_pred = decide_batch(loglik, model.g, b, rng)
                row = MetricRow.from_labels(y_val, y_pred)
                acc[wi, bi, k] = row.accuracy
                pooled[wi, bi] += (row.tp, row.fp, row.tn, row.fn)

    mean_acc = acc.mean(axis=2)
    tp, fp = pooled[:, :, 0], pooled[:, :, 1]
    tn, fn = pooled[:, :, 2], pooled[:, :, 3]
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        specificity = np.where(tn + fp > 0, tn / (tn + fp), 0.0)
    feasible = (recall >= cfg.constraint_floor) & (specificity >= cfg.constraint_floor)

    fallback = not bool(feasible.any())
    search = mean_acc if fallback else np.where(feasible, mean_acc, -np.inf)
    flat = int(np.argmax(search))  # ties: first in (w, b) lexicographic order
    wi, bi = divmod(flat, n_b)
    return TuneResult(
        w=cfg.w_grid[wi],
        b=cfg.b_grid[bi],
        mean_accuracy=float(mean_acc[wi, bi]),
        fallback=fallback,
        evaluated=n_w * n_b,
    )


def evaluate_video(data: VideoData, algo: str, cfg: EvalConfig) -> VideoEvaluation:
    """Run the N-iteration protocol for one algorithm on one video."""
    counts = [int((data.labels == c).sum()) for c in (0, 1)]
    if min(counts) < cfg.min_class_samples:
        return VideoEvaluation(
            data.video_id,
            algo,
            excluded=True,
            reason=(
                f"insufficient samples: {counts[0]} non-CFA / {counts[1]} CFA "
                f"(need {cfg.min_class_samples} of each)"
            ),
        )

    result = VideoEvaluation(data.video_id, algo)
    for iteration in range(cfg.iterations):
        folds = stratified_folds(
            data.labels, cfg.folds, rng_for(cfg.seed, _NS_FOLDS, data.video_key, iteration)
        )
        test_ids = folds[-1]
        train_folds = folds[:-1]
        train_ids = np.concatenate(train_folds)
        y_test = data.labels[test_ids]
        test_rng = rng_for(
            cfg.seed, _NS_TEST, data.video_key, iteration, _ALGO_INDEX[algo]
        )

        try:
            if algo == "skr":
                g1 = float(data.labels[train_ids].mean())
                y_pred = np.array([int(test_rng.random() < g1) for _ in test_ids])
                result.iterations.append(
                    IterationResult(MetricRow.from_labels(y_test, y_pred), None, None)
                )
                continue

            tuned = tune(data, train_folds, algo, cfg, iteration)
            corpus = data.corpus(tuned.w)
            model = _train(algo, corpus, train_ids, cfg.alpha)
            model.width_s = tuned.w
            loglik = model.batch_log_likelihood(corpus, test_ids)
            y_pred = decide_batch(loglik, model.g, tuned.b, test_rng)
            result.iterations.append(
                IterationResult(
                    MetricRow.from_labels(y_test, y_pred),
                    tuned.w,
                    tuned.b,
                    tuned.fallback,
                )
            )
        except ValueError as exc:
            log.warning(
                "iteration %d failed for %s/%s: %s",
                iteration,
                data.video_id,
                algo,
                exc,
            )
    return result


def _evaluate_video_task(args) -> list[dict]:
    video_id, video_key, pairs, length, algos, cfg = args
    data = VideoData(video_id, video_key, pairs, length, cfg.denoise)
    out = []
    for algo in algos:
        evaluation = evaluate_video(data, algo, cfg)
        out.append(_evaluation_to_dict(evaluation))
    return out


def _evaluation_to_dict(ev: VideoEvaluation) -> dict:
    return {
        "video_id": ev.video_id,
        "algo": ev.algo,
        "excluded": ev.excluded,
        "reason": ev.reason,
        "iterations": [
            {
                "tp": it.metrics.tp,
                "fp": it.metrics.fp,
                "tn": it.metrics.tn,
                "fn": it.metrics.fn,
                "w": it.w,
                "b": it.b,
                "tuning_fallback": it.tuning_fallback,
            }
            for it in ev.iterations
        ],
    }


def _evaluation_from_dict(doc: dict) -> VideoEvaluation:
    ev = VideoEvaluation(doc["video_id"], doc["algo"], doc["excluded"], doc["reason"])
    for it in doc["iterations"]:
        ev.iterations.append(
            IterationResult(
                MetricRow(it["tp"], it["fp"], it["tn"], it["fn"]),
                it["w"],
                it["b"],
                it["tuning_fallback"],
            )
        )
    return ev


def evaluate_videos(
    videos: list[tuple[str, int, list[UVPair], float]],
    algos: tuple[str, ...],
    cfg: EvalConfig,
    jobs: int = 1,
) -> list[VideoEvaluation]:
    """Evaluate many (video_id, video_key, pairs, length) tasks.

    Worker count never affects output: tasks are independent, seeded by
    structural keys, and merged in (video, algorithm) order.
    """
    tasks = [
        (video_id, video_key, pairs, length, algos, cfg)
        for video_id, video_key, pairs, length in videos
    ]
    if jobs <= 1 or len(tasks) <= 1:
        nested = [_evaluate_video_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(_evaluate_video_task, tasks))
    flat = [_evaluation_from_dict(doc) for group in nested for doc in group]
    flat.sort(key=lambda ev: (ev.video_id, _ALGO_INDEX[ev.algo]))
    return flat


def compare_algorithms(
    per_video_a: list[float], per_video_b: list[float]
) -> TestResult:
    """Two-sided rank-sum test between two per-video metric distributions."""
    if len(per_video_a) < 3 or len(per_video_b) < 3:
        raise ValueError("insufficient samples: need at least 3 videos per side")
    return wrs_test(per_video_a, per_video_b)


def improvement_report(
    evaluations: list[VideoEvaluation], baseline: str = "skr"
) -> list[dict]:
    """Per-video percent change of each algorithm's mean metrics vs the baseline.

    A zero baseline metric yields a None delta (undefined); videos missing
    from the baseline are skipped with a warning.
    """
    base: dict[str, VideoEvaluation] = {
        ev.video_id: ev
        for ev in evaluations
        if ev.algo == baseline and not ev.excluded
    }
    rows: list[dict] = []
    for ev in evaluations:
        if ev.algo == baseline or ev.excluded:
            continue
        ref = base.get(ev.video_id)
        if ref is None:
            log.warning("no %s baseline for video %s; row skipped", baseline, ev.video_id)
            continue
        row: dict = {"video": ev.video_id, "algo": ev.algo}
        for metric in ("accuracy", "f1"):
            ours = ev.mean_sd(metric)[0]
            theirs = ref.mean_sd(metric)[0]
            key = "acc_pct" if metric == "accuracy" else "f1_pct"
            row[key] = None if theirs == 0 else 100.0 * (ours - theirs) / theirs
        rows.append(row)
    return rows
