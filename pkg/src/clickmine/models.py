"""Per-video probabilistic predictors over position sequences.

Three cohort models per class (visit frequencies, discrete transition
probabilities pooled into four direction classes, and continuous-time
transition rates), a bias-adjusted MAP decision rule, and the skewed-random
baseline that ignores behavior entirely.  Likelihoods are computed in log
space throughout; the additive decision bias enters through a stable
log-sum, so long sequences cannot underflow the comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from clickmine.positions import (
    BACKWARD,
    DIRECT,
    FORWARD,
    REPEAT,
    PositionSequence,
    classify_transition,
)

__all__ = [
    "PackedCorpus",
    "Prediction",
    "DPModel",
    "DTModel",
    "CTModel",
    "SKRModel",
    "pack_corpus",
    "train_dp",
    "train_dt",
    "train_ct",
    "train_skr",
    "map_decide",
    "skr_predict",
    "model_to_json",
    "model_from_json",
]

# Column layout of transition-class matrices: backward, repeat, direct, forward.
_CLS_COL = {BACKWARD: 0, REPEAT: 1, DIRECT: 2, FORWARD: 3}
EXIT_COLS = (0, 2, 3)  # all but the repeat (diagonal) column

# Additive floor on continuous-time exit rates; keeps log-rates finite for
# moves never seen in training without visibly distorting estimated rates.
CT_RATE_EPS = 1e-9
CT_HOLDING_FLOOR = 1e-9


class ClassDataError(ValueError):
    """Raised when a training class is empty or has no usable data."""


@dataclass(frozen=True)
class Prediction:
    label: int
    log_likelihoods: tuple[float, float]
    tie: bool = False


class PackedCorpus:
    """Array form of a list of position sequences sharing one index range.

    Entries, transitions, and segment heads are concatenated with offset
    tables, so per-subset counting and per-sequence likelihoods reduce to
    bincounts, gathers, and prefix sums.
    """

    def __init__(self, sequences: Sequence[PositionSequence], n_slots: int) -> None:
        self.n_slots = n_slots
        self.n = len(sequences)
        self.labels = np.array(
            [-1 if s.cfa is None else int(s.cfa) for s in sequences], dtype=np.int8
        )
        e_idx: list[int] = []
        e_dwell: list[float] = []
        t_src: list[int] = []
        t_cls: list[int] = []
        h_idx: list[int] = []
        e_off = [0]
        t_off = [0]
        h_off = [0]
        for seq in sequences:
            for idx, dwell in seq.entries:
                e_idx.append(idx)
                e_dwell.append(dwell)
            for a, b in seq.transitions():
                t_src.append(a)
                t_cls.append(_CLS_COL[classify_transition(a, b)])
            h_idx.extend(seq.segment_heads())
            e_off.append(len(e_idx))
            t_off.append(len(t_src))
            h_off.append(len(h_idx))
        self.e_idx = np.asarray(e_idx, dtype=np.int64)
        self.e_dwell = np.asarray(e_dwell, dtype=np.float64)
        self.t_src = np.asarray(t_src, dtype=np.int64)
        self.t_cls = np.asarray(t_cls, dtype=np.int64)
        self.h_idx = np.asarray(h_idx, dtype=np.int64)
        self.e_off = np.asarray(e_off, dtype=np.int64)
        self.t_off = np.asarray(t_off, dtype=np.int64)
        self.h_off = np.asarray(h_off, dtype=np.int64)
        if self.e_idx.size and int(self.e_idx.max()) >= n_slots:
            raise ValueError(
                f"position index {int(self.e_idx.max())} outside the "
                f"{n_slots}-slot range; training/test width mismatch"
            )

    def gather(self, arr: np.ndarray, off: np.ndarray, ids: np.ndarray) -> np.ndarray:
        if len(ids) == 0:
            return arr[:0]
        return np.concatenate([arr[off[i] : off[i + 1]] for i in ids])

    def lengths(self, off: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return off[np.asarray(ids) + 1] - off[np.asarray(ids)]


def pack_corpus(sequences: Sequence[PositionSequence], n_slots: int) -> PackedCorpus:
    return PackedCorpus(sequences, n_slots)


def _per_sequence_sums(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    csum = np.concatenate(([0.0], np.cumsum(values)))
    ends = np.cumsum(lengths)
    starts = ends - lengths
    return csum[ends] - csum[starts]


def _class_ids(corpus: PackedCorpus, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(ids)
    labels = corpus.labels[ids]
    ids0 = ids[labels == 0]
    ids1 = ids[labels == 1]
    if len(ids0) == 0 or len(ids1) == 0:
        raise ClassDataError("insufficient class data: a training class is empty")
    return ids0, ids1


def _priors(n0: int, n1: int) -> tuple[float, float]:
    total = n0 + n1
    return n0 / total, n1 / total


def _visit_distribution(
    corpus: PackedCorpus, ids: np.ndarray, alpha: float
) -> np.ndarray:
    counts = np.bincount(
        corpus.gather(corpus.e_idx, corpus.e_off, ids), minlength=corpus.n_slots
    ).astype(np.float64)
    smoothed = counts + alpha
    total = smoothed.sum()
    if total <= 0:
        raise ClassDataError("insufficient class data: no position visits")
    return smoothed / total


@dataclass
class DPModel:
    """Visit-frequency model: independent draws from a per-class distribution."""

    width_s: float
    alpha: float
    g: tuple[float, float]
    f: np.ndarray  # (2, n_slots), rows on the simplex

    @property
    def algo(self) -> str:
        return "dp"

    def batch_log_likelihood(self, corpus: PackedCorpus, ids: np.ndarray) -> np.ndarray:
        """(len(ids), 2) array of per-class log-likelihoods."""
        ids = np.asarray(ids)
        idx = corpus.gather(corpus.e_idx, corpus.e_off, ids)
        lengths = corpus.lengths(corpus.e_off, ids)
        with np.errstate(divide="ignore"):
            logf = np.log(self.f)
        out = np.empty((len(ids), 2))
        for c in (0, 1):
            out[:, c] = _per_sequence_sums(logf[c, idx], lengths)
        return out

    def log_likelihood(self, seq: PositionSequence) -> tuple[float, float]:
        idx = np.asarray(seq.indices(), dtype=np.int64)
        if idx.size and int(idx.max()) >= self.f.shape[1]:
            raise ValueError("position index outside model range (width mismatch)")
        with np.errstate(divide="ignore"):
            logf = np.log(self.f)
        return float(logf[0, idx].sum()), float(logf[1, idx].sum())


def train_dp(
    sequences: Sequence[PositionSequence] | PackedCorpus,
    n_slots: int | None = None,
    alpha: float = 0.5,
    ids: np.ndarray | None = None,
) -> DPModel:
    """Estimate per-class visit distributions with additive smoothing."""
    corpus = _as_corpus(sequences, n_slots)
    ids = np.arange(corpus.n) if ids is None else np.asarray(ids)
    ids0, ids1 = _class_ids(corpus, ids)
    f = np.stack(
        [
            _visit_distribution(corpus, ids0, alpha),
            _visit_distribution(corpus, ids1, alpha),
        ]
    )
    return DPModel(
        width_s=0.0, alpha=alpha, g=_priors(len(ids0), len(ids1)), f=f
    )


def _transition_counts(corpus: PackedCorpus, ids: np.ndarray) -> np.ndarray:
    src = corpus.gather(corpus.t_src, corpus.t_off, ids)
    cls = corpus.gather(corpus.t_cls, corpus.t_off, ids)
    flat = np.bincount(src * 4 + cls, minlength=corpus.n_slots * 4)
    return flat.reshape(corpus.n_slots, 4).astype(np.float64)


@dataclass
class DTModel:
    """Homogeneous transition model over the four direction classes."""

    width_s: float
    alpha: float
    g: tuple[float, float]
    init: np.ndarray  # (2, n_slots) visit distributions for the first index
    trans: np.ndarray  # (2, n_slots, 4), rows on the simplex

    @property
    def algo(self) -> str:
        return "dt"

    def batch_log_likelihood(self, corpus: PackedCorpus, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        src = corpus.gather(corpus.t_src, corpus.t_off, ids)
        cls = corpus.gather(corpus.t_cls, corpus.t_off, ids)
        t_lengths = corpus.lengths(corpus.t_off, ids)
        heads = corpus.gather(corpus.h_idx, corpus.h_off, ids)
        h_lengths = corpus.lengths(corpus.h_off, ids)
        with np.errstate(divide="ignore"):
            log_init = np.log(self.init)
            log_trans = np.log(self.trans)
        out = np.empty((len(ids), 2))
        for c in (0, 1):
            out[:, c] = _per_sequence_sums(
                log_trans[c, src, cls], t_lengths
            ) + _per_sequence_sums(log_init[c, heads], h_lengths)
        return out

    def log_likelihood(self, seq: PositionSequence) -> tuple[float, float]:
        corpus = PackedCorpus([seq], self.trans.shape[1])
        ll = self.batch_log_likelihood(corpus, np.array([0]))
        return float(ll[0, 0]), float(ll[0, 1])


def train_dt(
    sequences: Sequence[PositionSequence] | PackedCorpus,
    n_slots: int | None = None,
    alpha: float = 0.5,
    ids: np.ndarray | None = None,
) -> DTModel:
    """Estimate per-class transition matrices, pooled by direction class.

    Every backward (and likewise forward) move from a position shares one
    probability regardless of how far it lands; rows are smoothed additively
    and normalized.  Initial indices of each segment are scored with the
    visit distribution.
    """
    corpus = _as_corpus(sequences, n_slots)
    ids = np.arange(corpus.n) if ids is None else np.asarray(ids)
    ids0, ids1 = _class_ids(corpus, ids)
    init = np.stack(
        [
            _visit_distribution(corpus, ids0, alpha),
            _visit_distribution(corpus, ids1, alpha),
        ]
    )
    trans = np.empty((2, corpus.n_slots, 4))
    for c, members in ((0, ids0), (1, ids1)):
        counts = _transition_counts(corpus, members) + alpha
        denom = counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            rows = np.where(denom > 0, counts / denom, 0.0)
        trans[c] = rows
    return DTModel(
        width_s=0.0,
        alpha=alpha,
        g=_priors(len(ids0), len(ids1)),
        init=init,
        trans=trans,
    )


@dataclass
class CTModel:
    """Continuous-time transition-rate model.

    ``rates`` stores the three exit-rate columns plus the balancing repeat
    column (the negated row sum), so each row of the full matrix sums to 0.
    """

    width_s: float
    g: tuple[float, float]
    rates: np.ndarray  # (2, n_slots, 4)

    @property
    def algo(self) -> str:
        return "ct"

    def exit_rate_sums(self) -> np.ndarray:
        return self.rates[:, :, list(EXIT_COLS)].sum(axis=2)

    def batch_log_likelihood(self, corpus: PackedCorpus, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        src = corpus.gather(corpus.t_src, corpus.t_off, ids)
        cls = corpus.gather(corpus.t_cls, corpus.t_off, ids)
        t_lengths = corpus.lengths(corpus.t_off, ids)
        exits = cls != _CLS_COL[REPEAT]
        idx = corpus.gather(corpus.e_idx, corpus.e_off, ids)
        dwell = corpus.gather(corpus.e_dwell, corpus.e_off, ids)
        e_lengths = corpus.lengths(corpus.e_off, ids)
        exit_sums = self.exit_rate_sums()
        with np.errstate(divide="ignore"):
            log_rates = np.log(self.rates[:, :, list(EXIT_COLS)])
        # Remap exit classes (0, 2, 3) onto columns (0, 1, 2) of the slice.
        col_of = np.array([0, -1, 1, 2])
        out = np.empty((len(ids), 2))
        for c in (0, 1):
            gains = np.zeros_like(src, dtype=np.float64)
            gains[exits] = log_rates[c, src[exits], col_of[cls[exits]]]
            holding = dwell * exit_sums[c, idx]
            out[:, c] = _per_sequence_sums(gains, t_lengths) - _per_sequence_sums(
                holding, e_lengths
            )
        return out

    def log_likelihood(self, seq: PositionSequence) -> tuple[float, float]:
        corpus = PackedCorpus([seq], self.rates.shape[1])
        ll = self.batch_log_likelihood(corpus, np.array([0]))
        return float(ll[0, 0]), float(ll[0, 1])


def train_ct(
    sequences: Sequence[PositionSequence] | PackedCorpus,
    n_slots: int | None = None,
    ids: np.ndarray | None = None,
) -> CTModel:
    """Estimate per-class exit rates from transition counts and holding times.

    Rates are transition counts over total time spent at the source index;
    indices with exits but zero recorded holding time fall back to a floored
    denominator.  Every exit rate then gains a tiny additive floor, and the
    repeat column balances each row to zero.
    """
    corpus = _as_corpus(sequences, n_slots)
    ids = np.arange(corpus.n) if ids is None else np.asarray(ids)
    ids0, ids1 = _class_ids(corpus, ids)
    rates = np.empty((2, corpus.n_slots, 4))
    for c, members in ((0, ids0), (1, ids1)):
        counts = _transition_counts(corpus, members)
        holding = np.bincount(
            corpus.gather(corpus.e_idx, corpus.e_off, members),
            weights=corpus.gather(corpus.e_dwell, corpus.e_off, members),
            minlength=corpus.n_slots,
        )
        exit_counts = counts[:, list(EXIT_COLS)]
        has_exits = exit_counts.sum(axis=1) > 0
        denom = np.where((holding <= 0) & has_exits, CT_HOLDING_FLOOR, holding)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(denom[:, None] > 0, exit_counts / denom[:, None], 0.0)
        q = q + CT_RATE_EPS
        rates[c, :, list(EXIT_COLS)] = q.T
        rates[c, :, _CLS_COL[REPEAT]] = -q.sum(axis=1)
    return CTModel(width_s=0.0, g=_priors(len(ids0), len(ids1)), rates=rates)


@dataclass
class SKRModel:
    """Skewed-random baseline: predicts the training-set CFA rate blindly."""

    g: tuple[float, float]

    @property
    def algo(self) -> str:
        return "skr"


def train_skr(
    sequences: Sequence[PositionSequence] | PackedCorpus,
    n_slots: int | None = None,
    ids: np.ndarray | None = None,
) -> SKRModel:
    corpus = _as_corpus(sequences, n_slots)
    ids = np.arange(corpus.n) if ids is None else np.asarray(ids)
    ids0, ids1 = _class_ids(corpus, ids)
    return SKRModel(g=_priors(len(ids0), len(ids1)))


def _as_corpus(
    sequences: Sequence[PositionSequence] | PackedCorpus, n_slots: int | None
) -> PackedCorpus:
    if isinstance(sequences, PackedCorpus):
        return sequences
    if n_slots is None:
        n_slots = 1 + max(
            (idx for seq in sequences for idx, _ in seq.entries), default=0
        )
    return PackedCorpus(sequences, n_slots)


def map_decide(
    logl0: float,
    logl1: float,
    g: tuple[float, float],
    b_v: float,
    rng: np.random.Generator,
) -> Prediction:
    """Bias-adjusted MAP: class 1 iff g1*L1 > g0*L0 + b, compared in log space.

    Exact equality resolves by a uniform draw against the class-0 prior, so
    ties land on class 1 with probability 1 - g0.
    """
    if b_v < 0:
        raise ValueError("decision bias must be non-negative")
    left = np.log(g[1]) + logl1
    right_base = np.log(g[0]) + logl0
    right = np.logaddexp(right_base, np.log(b_v)) if b_v > 0 else right_base
    if left > right:
        return Prediction(1, (logl0, logl1))
    if left < right:
        return Prediction(0, (logl0, logl1))
    label = int(rng.random() >= g[0])
    return Prediction(label, (logl0, logl1), tie=True)


def decide_batch(
    loglik: np.ndarray,
    g: tuple[float, float],
    b_v: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized map_decide over an (n, 2) log-likelihood array."""
    left = np.log(g[1]) + loglik[:, 1]
    right = np.log(g[0]) + loglik[:, 0]
    if b_v > 0:
        right = np.logaddexp(right, np.log(b_v))
    labels = np.where(left > right, 1, 0)
    ties = left == right
    if ties.any():
        draws = rng.random(int(ties.sum()))
        labels[ties] = (draws >= g[0]).astype(int)
    return labels


def skr_predict(g1: float, rng: np.random.Generator) -> int:
    """Bernoulli(g1) draw; ignores the clickstream entirely."""
    return int(rng.random() < g1)


def model_to_json(model: DPModel | DTModel | CTModel | SKRModel) -> str:
    """Serialize a trained model; float repr keeps probabilities bit-exact."""
    doc: dict = {"algo": model.algo, "g": list(model.g)}
    if isinstance(model, DPModel):
        doc.update(w=model.width_s, alpha=model.alpha, params={"f": model.f.tolist()})
    elif isinstance(model, DTModel):
        doc.update(
            w=model.width_s,
            alpha=model.alpha,
            params={"init": model.init.tolist(), "trans": model.trans.tolist()},
        )
    elif isinstance(model, CTModel):
        doc.update(w=model.width_s, alpha=None, params={"rates": model.rates.tolist()})
    else:
        doc.update(w=None, alpha=None, params={})
    return json.dumps(doc, separators=(",", ":"))


def model_from_json(text: str) -> DPModel | DTModel | CTModel | SKRModel:
    doc = json.loads(text)
    g = (float(doc["g"][0]), float(doc["g"][1]))
    algo = doc["algo"]
    params = doc["params"]
    if algo == "dp":
        return DPModel(doc["w"], doc["alpha"], g, np.array(params["f"]))
    if algo == "dt":
        return DTModel(
            doc["w"], doc["alpha"], g, np.array(params["init"]), np.array(params["trans"])
        )
    if algo == "ct":
        return CTModel(doc["w"], g, np.array(params["rates"]))
    if algo == "skr":
        return SKRModel(g)
    raise ValueError(f"unknown model algo {algo!r}")
