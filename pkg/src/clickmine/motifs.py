"""Recurring-subsequence (motif) discovery over the 18-symbol sequences.

A two-component mixture drives discovery: every length-w window of the
corpus is generated either by a position-specific probability matrix (PSPM)
or by a position-independent background of corpus symbol frequencies, with
a latent start indicator per window.  EM with a frequency-based Dirichlet
prior fits the PSPM; additional motifs per width come from re-fitting after
probabilistically erasing claimed windows.  Significance is judged by a
Monte-Carlo e-value: the fraction of background-generated corpora whose
best refit (same width, same occurrence count) attains a higher
log-likelihood ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from clickmine.events import EVENT_ALPHABET, SYMBOL_INDEX, EventSequence
from clickmine.seeding import rng_for
from clickmine.stats import two_prop_test

log = logging.getLogger("clickmine")

__all__ = [
    "MotifModel",
    "MotifReport",
    "MotifConfig",
    "discover_motifs",
    "e_value",
    "consensus",
    "consensus_sets",
    "render_consensus",
    "parse_consensus",
    "count_occurrences",
    "support_and_significance",
    "filter_motifs",
]

ALPHABET_SIZE = len(EVENT_ALPHABET)
WILDCARD = "⋆"  # the star marking positions with no dominant event

# Dirichlet prior strength: pseudo-counts are PRIOR_STRENGTH * background.
PRIOR_STRENGTH = 0.5

# Window responsibility above which a window counts as an occurrence and is
# erased before the next discovery round.
CLAIM_THRESHOLD = 0.5

_KIND_GROUP = {
    "Pa": "Pa", "Sb": "Sb", "Sf": "Sf",
    "Rf": "Rf", "Rs": "Rf", "Rd": "Rf",
    "Pl": "Pl",
}


@dataclass
class MotifModel:
    """A fitted motif: PSPM plus the statistics used to judge it."""

    width: int
    pspm: np.ndarray  # (width, 18), rows on the simplex
    background: np.ndarray  # (18,)
    e_value: float
    occurrences: int
    log_likelihood_ratio: float
    mixture_weight: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def argmax_symbols(self) -> tuple[str, ...]:
        return tuple(EVENT_ALPHABET[j] for j in self.pspm.argmax(axis=1))


@dataclass
class MotifReport:
    """Support and class-association summary for one motif."""

    width: int
    consensus: str
    e_value: float
    fs: float
    fs0: float
    fs1: float
    p_hat: float
    p_value: float
    group: str
    videos_any: int
    videos_10: int
    degenerate: bool = False


@dataclass(frozen=True)
class MotifConfig:
    widths: tuple[int, ...] = tuple(range(4, 11))
    e_threshold: float = 0.05
    replicates: int = 200
    restarts: int = 5
    max_motifs_per_width: int = 5
    site_mode: str = "anr"  # "anr": any occurrence count; "oops": one per sequence
    max_iter: int = 40
    tol: float = 1e-8
    min_sequences: int = 50

    def __post_init__(self) -> None:
        if any(w < 2 for w in self.widths):
            raise ValueError("motif widths must be >= 2")
        if self.site_mode not in ("anr", "oops"):
            raise ValueError(f"unknown site mode {self.site_mode!r}")


class _WindowCorpus:
    """All length-w windows of a symbol corpus, as an integer matrix."""

    def __init__(self, encoded: list[np.ndarray], width: int) -> None:
        self.width = width
        mats = []
        seq_ids = []
        offsets = []
        for sid, arr in enumerate(encoded):
            if len(arr) < width:
                continue
            mats.append(np.lib.stride_tricks.sliding_window_view(arr, width))
            count = len(arr) - width + 1
            seq_ids.append(np.full(count, sid))
            offsets.append(np.arange(count))
        if not mats:
            raise ValueError(f"no sequence is at least {width} symbols long")
        self.windows = np.concatenate(mats)
        self.seq_ids = np.concatenate(seq_ids)
        self.offsets = np.concatenate(offsets)
        self.n = len(self.windows)
        self.n_seqs = len(encoded)

    def weights_from_factors(self, factors: list[np.ndarray]) -> np.ndarray:
        parts = []
        for sid, arr in enumerate(factors):
            if len(arr) < self.width:
                continue
            parts.append(
                np.lib.stride_tricks.sliding_window_view(arr, self.width).prod(axis=1)
            )
        return np.concatenate(parts)


def _encode_corpus(sequences: list[EventSequence]) -> list[np.ndarray]:
    return [
        np.array([SYMBOL_INDEX[s] for s in seq.symbols], dtype=np.int64)
        for seq in sequences
    ]


def _background(encoded: list[np.ndarray]) -> np.ndarray:
    counts = np.zeros(ALPHABET_SIZE)
    for arr in encoded:
        counts += np.bincount(arr, minlength=ALPHABET_SIZE)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty corpus")
    # A pseudo-count keeps unseen symbols representable under the null.
    counts += 0.5
    return counts / counts.sum()


@dataclass
class _Fit:
    pspm: np.ndarray
    lam: float
    responsibilities: np.ndarray
    objective: float
    trace: list[float]
    converged: bool


def _seed_pspm(window: np.ndarray, bg: np.ndarray) -> np.ndarray:
    width = len(window)
    pspm = np.tile(0.4 * bg, (width, 1))
    pspm[np.arange(width), window] += 0.6
    return pspm


def _log_window_probs(windows: np.ndarray, log_pspm: np.ndarray) -> np.ndarray:
    width = windows.shape[1]
    return log_pspm[np.arange(width)[None, :], windows].sum(axis=1)


def _em_fit(
    win: _WindowCorpus,
    u: np.ndarray,
    log_bg_win: np.ndarray,
    bg: np.ndarray,
    pspm0: np.ndarray,
    lam0: float,
    max_iter: int,
    tol: float,
    site_mode: str,
) -> _Fit:
    """Run EM to convergence from one starting PSPM.

    The tracked objective is the weighted data log-likelihood of the mixture
    plus the Dirichlet log-prior on the PSPM; it must not decrease by more
    than a float tolerance per iteration.
    """
    width = win.width
    prior = PRIOR_STRENGTH * bg
    pspm = pspm0.copy()
    lam = lam0
    trace: list[float] = []
    z = np.zeros(win.n)
    u_total = u.sum()
    converged = False

    if site_mode == "oops":
        seq_boundaries = np.flatnonzero(np.diff(win.seq_ids)) + 1

    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            log_pspm = np.log(pspm)
        log_p1 = _log_window_probs(win.windows, log_pspm)

        if site_mode == "anr":
            a = math.log(lam) + log_p1
            b = math.log1p(-lam) + log_bg_win
            denom = np.logaddexp(a, b)
            z = np.exp(a - denom)
            objective = float((u * denom).sum())
        else:
            # One occurrence per sequence: responsibilities normalize within
            # each sequence over the likelihood ratio of its windows.
            score = log_p1 - log_bg_win + np.log(np.maximum(u, 1e-300))
            objective = 0.0
            z = np.empty(win.n)
            for chunk in np.split(np.arange(win.n), seq_boundaries):
                s = score[chunk]
                m = s.max()
                lse = m + math.log(np.exp(s - m).sum())
                z[chunk] = np.exp(s - lse)
                objective += lse - math.log(len(chunk))

        with np.errstate(divide="ignore"):
            objective += float((prior * np.log(pspm)).sum())
        if trace and objective < trace[-1] - 1e-9:
            raise AssertionError(
                f"EM objective decreased: {trace[-1]} -> {objective}"
            )
        done = bool(trace) and abs(objective - trace[-1]) <= tol * (abs(objective) + 1.0)
        trace.append(objective)
        if done:
            converged = True
            break

        zw = z * u
        counts = np.empty((width, ALPHABET_SIZE))
        for pos in range(width):
            counts[pos] = np.bincount(
                win.windows[:, pos], weights=zw, minlength=ALPHABET_SIZE
            )
        pspm = (counts + prior) / (zw.sum() + prior.sum())
        assert np.allclose(pspm.sum(axis=1), 1.0, atol=1e-9)
        if site_mode == "anr" and u_total > 0:
            lam = float(np.clip(zw.sum() / u_total, 1e-12, 1.0 - 1e-12))

    return _Fit(pspm, lam, z, trace[-1], trace, converged)


def _candidate_starts(
    win: _WindowCorpus, u: np.ndarray, restarts: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Starting windows: the most repeated windows first, then random draws.

    Repetition is weighted by the erase factors, so windows claimed by
    earlier motifs stop nominating themselves.
    """
    width = win.width
    base = ALPHABET_SIZE ** np.arange(width, dtype=np.int64)
    packed = win.windows @ base
    uniq, inverse = np.unique(packed, return_inverse=True)
    mult = np.bincount(inverse, weights=u)
    order = np.argsort(-mult, kind="stable")
    starts: list[np.ndarray] = []
    for k in order[: max(1, restarts - 2)]:
        if mult[k] <= 0:
            break
        first = int(np.flatnonzero(inverse == k)[0])
        starts.append(win.windows[first])
    live = np.flatnonzero(u > 0.5)
    pool = live if len(live) else np.arange(win.n)
    while len(starts) < restarts:
        starts.append(win.windows[int(rng.choice(pool))])
    return starts


def _fit_best(
    win: _WindowCorpus,
    u: np.ndarray,
    log_bg_win: np.ndarray,
    bg: np.ndarray,
    cfg: MotifConfig,
    rng: np.random.Generator,
) -> _Fit:
    """Best-of-restarts fit: two-step probes on every start, the winner runs
    to convergence."""
    lam0 = min(0.5, max(1.0 / win.n, win.n_seqs / (2.0 * win.n)))
    best_probe: tuple[float, np.ndarray] | None = None
    for window in _candidate_starts(win, u, cfg.restarts, rng):
        probe = _em_fit(
            win, u, log_bg_win, bg, _seed_pspm(window, bg), lam0,
            max_iter=2, tol=cfg.tol, site_mode=cfg.site_mode,
        )
        if best_probe is None or probe.objective > best_probe[0]:
            best_probe = (probe.objective, window)
    assert best_probe is not None
    return _em_fit(
        win, u, log_bg_win, bg, _seed_pspm(best_probe[1], bg), lam0,
        max_iter=cfg.max_iter, tol=cfg.tol, site_mode=cfg.site_mode,
    )


def _top_llr_sum(log_p1: np.ndarray, log_bg_win: np.ndarray, n_occ: int) -> float:
    llr = log_p1 - log_bg_win
    n_occ = min(max(n_occ, 1), len(llr))
    if n_occ == len(llr):
        return float(llr.sum())
    return float(np.partition(llr, -n_occ)[-n_occ:].sum())


def e_value(
    motif: MotifModel,
    encoded: list[np.ndarray],
    cfg: MotifConfig,
    rng: np.random.Generator,
    stop_above: float | None = None,
) -> float:
    """Monte-Carlo significance of a fitted motif against the background.

    Generates ``cfg.replicates`` corpora of identical shape from the
    background distribution, refits a single motif of the same width in each
    with the identical procedure, and reports the fraction whose
    log-likelihood ratio exceeds the candidate's.  Every fit, candidate or
    replicate, is scored on its own claimed windows, which keeps the
    comparison exchangeable under the null.

    ``stop_above`` enables a sequential shortcut: once enough replicates
    have won that the final fraction must exceed it, remaining replicates
    are skipped and the running fraction returned (only ever used for
    motifs that are being discarded anyway).
    """
    if cfg.replicates <= 0:
        raise ValueError("replicates required: e-value needs replicates >= 1")
    lengths = [len(arr) for arr in encoded if len(arr) >= motif.width]
    splits = np.cumsum(lengths)[:-1]
    total = int(sum(lengths))
    bg = motif.background
    with np.errstate(divide="ignore"):
        log_bg = np.log(bg)
    unreachable = (
        math.floor(stop_above * cfg.replicates) + 1 if stop_above is not None else None
    )
    higher = 0
    done = 0
    for _ in range(cfg.replicates):
        rep_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        flat = rep_rng.choice(ALPHABET_SIZE, size=total, p=bg)
        rep = np.split(flat, splits)
        rep_win = _WindowCorpus(rep, motif.width)
        log_bg_win = _log_window_probs(rep_win.windows, np.tile(log_bg, (motif.width, 1)))
        ones = np.ones(rep_win.n)
        fit = _fit_best(rep_win, ones, log_bg_win, bg, cfg, rep_rng)
        with np.errstate(divide="ignore"):
            rep_log_p1 = _log_window_probs(rep_win.windows, np.log(fit.pspm))
        rep_occ = max(1, int((fit.responsibilities > CLAIM_THRESHOLD).sum()))
        llr = _top_llr_sum(rep_log_p1, log_bg_win, rep_occ)
        done += 1
        if llr > motif.log_likelihood_ratio:
            higher += 1
            if unreachable is not None and higher >= unreachable:
                break
    return higher / done


def discover_motifs(
    sequences: list[EventSequence],
    cfg: MotifConfig = MotifConfig(),
    seed: int = 0,
) -> list[MotifModel]:
    """Find significant motifs of each configured width.

    Per width: fit, score, and keep motifs while their e-value stays at or
    below the threshold, erasing claimed windows between rounds (erased
    rounds only get weaker, so the first failure ends the width).  Results
    are ordered by (width, descending likelihood ratio) for deterministic
    merging.
    """
    encoded = _encode_corpus(sequences)
    max_width = max(cfg.widths)
    usable = sum(1 for arr in encoded if len(arr) >= max_width)
    if usable < cfg.min_sequences:
        raise ValueError(
            f"corpus too small: {usable} sequences of length >= {max_width} "
            f"(need {cfg.min_sequences})"
        )
    bg = _background(encoded)
    found: list[MotifModel] = []
    for width in sorted(cfg.widths):
        win = _WindowCorpus(encoded, width)
        with np.errstate(divide="ignore"):
            log_bg = np.log(bg)
        log_bg_win = _log_window_probs(win.windows, np.tile(log_bg, (width, 1)))
        factors = [np.ones(len(arr)) for arr in encoded]
        for round_no in range(cfg.max_motifs_per_width):
            u = win.weights_from_factors(factors)
            if u.sum() < width:
                break
            fit_rng = rng_for(seed, width, round_no, 0)
            fit = _fit_best(win, u, log_bg_win, bg, cfg, fit_rng)
            if not fit.converged:
                log.debug(
                    "EM did not converge for width %d round %d; keeping best fit",
                    width,
                    round_no,
                )
            with np.errstate(divide="ignore"):
                log_p1 = _log_window_probs(win.windows, np.log(fit.pspm))
            claimed = fit.responsibilities > CLAIM_THRESHOLD
            occurrences = max(1, int(claimed.sum()))
            motif = MotifModel(
                width=width,
                pspm=fit.pspm,
                background=bg,
                e_value=1.0,
                occurrences=occurrences,
                log_likelihood_ratio=_top_llr_sum(log_p1, log_bg_win, occurrences),
                mixture_weight=fit.lam,
                converged=fit.converged,
                objective_trace=fit.trace,
            )
            motif.e_value = e_value(
                motif,
                encoded,
                cfg,
                rng_for(seed, width, round_no, 1),
                stop_above=cfg.e_threshold,
            )
            if motif.e_value > cfg.e_threshold:
                break
            found.append(motif)
            for i in np.flatnonzero(claimed):
                sid = win.seq_ids[i]
                off = win.offsets[i]
                factors[sid][off : off + width] *= 1.0 - fit.responsibilities[i]
    found.sort(key=lambda m: (m.width, -m.log_likelihood_ratio))
    return found


def consensus_sets(pspm: np.ndarray, threshold: float = 0.25) -> list[list[str]]:
    """Per position, the events at or above the threshold, most likely first."""
    out: list[list[str]] = []
    for row in pspm:
        picked = [(float(row[j]), j) for j in range(ALPHABET_SIZE) if row[j] >= threshold]
        picked.sort(key=lambda item: (-item[0], item[1]))
        out.append([EVENT_ALPHABET[j] for _, j in picked])
    return out


def render_consensus(sets: list[list[str]]) -> str:
    parts = []
    for events in sets:
        if not events:
            parts.append(WILDCARD)
        elif len(events) == 1:
            parts.append(events[0])
        else:
            parts.append("[" + " ".join(events) + "]")
    return " ".join(parts)


def consensus(motif: MotifModel, threshold: float = 0.25) -> str:
    return render_consensus(consensus_sets(motif.pspm, threshold))


def parse_consensus(text: str) -> list[set[str] | None]:
    """Back from the rendered form to per-position allowed sets (None = any)."""
    out: list[set[str] | None] = []
    tokens = text.replace("[", " [ ").replace("]", " ] ").split()
    bracket: list[str] | None = None
    for token in tokens:
        if token == "[":
            bracket = []
        elif token == "]":
            out.append(set(bracket or []))
            bracket = None
        elif bracket is not None:
            bracket.append(token)
        elif token in (WILDCARD, "*"):
            out.append(None)
        else:
            out.append({token})
    return out


def count_occurrences(symbols: tuple[str, ...], pattern: list[set[str] | None]) -> int:
    """Occurrences of a consensus pattern as exact ungapped matches.

    The pattern matches at offset t when every position's symbol belongs to
    the consensus set there (wildcards match anything).
    """
    width = len(pattern)
    count = 0
    for t in range(len(symbols) - width + 1):
        if all(
            allowed is None or symbols[t + i] in allowed
            for i, allowed in enumerate(pattern)
        ):
            count += 1
    return count


def _dominant_group(sets: list[list[str]]) -> str:
    counts: dict[str, int] = {"Pa": 0, "Sb": 0, "Sf": 0, "Rf": 0}
    for events in sets:
        for symbol in events:
            kind = symbol[:2]
            group = _KIND_GROUP[kind]
            if group in counts:
                counts[group] += 1
    best = max(counts.values())
    if best == 0:
        return "Pl"
    for group in ("Pa", "Sb", "Sf", "Rf"):
        if counts[group] == best:
            return group
    raise AssertionError("unreachable")


def support_and_significance(
    motif: MotifModel,
    sequences: list[EventSequence],
    threshold: float = 0.25,
) -> MotifReport:
    """Class-wise support fractions and the significance of their difference.

    Support counts sequences containing at least one consensus occurrence.
    The success estimate is the midpoint of the 95% Wilson interval for the
    CFA share among motif-containing sequences; video supports count videos
    with at least 1 and at least 10 total occurrences.
    """
    sets = consensus_sets(motif.pspm, threshold)
    pattern: list[set[str] | None] = [set(s) if s else None for s in sets]
    labeled = [s for s in sequences if s.cfa is not None]
    if len(labeled) < len(sequences):
        log.warning("ignoring %d unlabeled sequences", len(sequences) - len(labeled))

    per_video: dict[str, int] = {}
    contains = {0: 0, 1: 0}
    totals = {0: 0, 1: 0}
    hit_any = 0
    for seq in labeled:
        occs = count_occurrences(seq.symbols, pattern)
        totals[seq.cfa] += 1
        if occs > 0:
            contains[seq.cfa] += 1
            hit_any += 1
        per_video[seq.video_id] = per_video.get(seq.video_id, 0) + occs

    videos_any = sum(1 for v in per_video.values() if v >= 1)
    videos_10 = sum(1 for v in per_video.values() if v >= 10)
    n_all = totals[0] + totals[1]
    fs = hit_any / n_all if n_all else 0.0
    fs0 = contains[0] / totals[0] if totals[0] else 0.0
    fs1 = contains[1] / totals[1] if totals[1] else 0.0
    group = _dominant_group(sets)

    if hit_any == 0 or totals[0] == 0 or totals[1] == 0:
        return MotifReport(
            motif.width, render_consensus(sets), motif.e_value,
            fs, fs0, fs1, p_hat=0.5, p_value=1.0, group=group,
            videos_any=videos_any, videos_10=videos_10, degenerate=True,
        )
    result = two_prop_test(contains[1], totals[1], contains[0], totals[0])
    assert result.ci is not None
    p_hat = (result.ci[0] + result.ci[1]) / 2.0
    return MotifReport(
        motif.width, render_consensus(sets), motif.e_value,
        fs, fs0, fs1, p_hat=p_hat, p_value=result.p_value, group=group,
        videos_any=videos_any, videos_10=videos_10,
    )


def _contained_at(
    inner: list[set[str] | None], outer: list[set[str] | None], offset: int
) -> bool:
    for i, allowed in enumerate(inner):
        outer_allowed = outer[offset + i]
        if outer_allowed is None:
            continue
        if allowed is None or not allowed <= outer_allowed:
            return False
    return True


def _is_subpattern(inner: list[set[str] | None], outer: list[set[str] | None]) -> bool:
    if len(inner) > len(outer):
        return False
    return any(
        _contained_at(inner, outer, off) for off in range(len(outer) - len(inner) + 1)
    )


def filter_motifs(
    reports: list[MotifReport],
    top_support: int = 10,
    p_threshold: float = 0.05,
) -> list[MotifReport]:
    """Curate reports the way the published inventories are assembled.

    Group by dominant non-play event (all-play motifs fall outside the four
    groups and are dropped); within each group keep the top supports and the
    significant ones, then resolve consensus containment by dropping the
    lower-support (or, at equal support, less significant) member of each
    contained pair.
    """
    by_group: dict[str, list[MotifReport]] = {}
    for report in reports:
        if report.group == "Pl":
            continue
        by_group.setdefault(report.group, []).append(report)

    curated: list[MotifReport] = []
    for group in ("Pa", "Sb", "Sf", "Rf"):
        members = by_group.get(group, [])
        if not members:
            continue
        ranked = sorted(members, key=lambda r: -r.fs)
        keep = [
            r
            for r in members
            if r in ranked[:top_support] or r.p_value <= p_threshold
        ]
        keep.sort(key=lambda r: (-r.fs, r.p_value, r.consensus))
        dropped: set[int] = set()
        patterns = [parse_consensus(r.consensus) for r in keep]
        for i in range(len(keep)):
            for j in range(len(keep)):
                if i == j or i in dropped or j in dropped:
                    continue
                a, b = patterns[i], patterns[j]
                if _is_subpattern(a, b) or _is_subpattern(b, a):
                    weaker = _weaker_of(keep[i], keep[j])
                    dropped.add(i if weaker is keep[i] else j)
        curated.extend(r for k, r in enumerate(keep) if k not in dropped)
    return curated


def _weaker_of(a: MotifReport, b: MotifReport) -> MotifReport:
    if a.fs != b.fs:
        return a if a.fs < b.fs else b
    if a.p_value != b.p_value:
        return a if a.p_value > b.p_value else b
    return a if a.width <= b.width else b
