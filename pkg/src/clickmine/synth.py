"""Synthetic clickstream generation with planted, recoverable structure.

Desk-scale stand-in for real course exports: videos are cut into blocks,
each user watches a random subset, and an optional signal block ties the
CFA label to whether that block was visited (with configurable fidelity).
Click templates can additionally be planted mid-segment at class-dependent
rates, and every planted location is recorded in a ground-truth ledger so
downstream recovery can be checked exactly.  A separate helper emits
symbol-level corpora with a planted motif for discovery oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from clickmine.events import EVENT_ALPHABET, EventSequence
from clickmine.ingest import RawClick, Submission, VideoCatalog, VideoEntry
from clickmine.seeding import rng_for

__all__ = [
    "SynthVideo",
    "SynthSpec",
    "SynthResult",
    "generate",
    "symbol_corpus",
]

_NS_USER = 301
_T0 = 1_000_000.0


@dataclass(frozen=True)
class SynthVideo:
    video_id: str
    length_s: float
    quiz_id: str
    cfa_rate: float = 0.5
    signal_block: int | None = None  # block whose visit drives the label
    fidelity: float = 0.9  # P(label equals the visit indicator)

    def __post_init__(self) -> None:
        if self.length_s <= 0:
            raise ValueError("video length must be positive")
        if not 0.0 <= self.cfa_rate <= 1.0 or not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("rates must lie in [0, 1]")


@dataclass(frozen=True)
class SynthSpec:
    n_users: int
    videos: tuple[SynthVideo, ...]
    block_s: float = 30.0
    p_watch: float = 0.5  # chance each non-signal block is watched
    boundary_jitter_s: float = 3.0
    pause_rate: float = 0.3  # chance of a natural mid-segment pause
    rate_change_rate: float = 0.1
    noise_rate: float = 0.0  # chance a trajectory gains a stall click
    no_click_rate: float = 0.0  # chance a user submits without watching
    motif_steps: tuple[tuple[str, float], ...] = ()  # (action, seconds) template
    motif_rate_cfa: float = 0.0
    motif_rate_noncfa: float = 0.0

    def __post_init__(self) -> None:
        if self.n_users < 1 or not self.videos:
            raise ValueError("need at least one user and one video")
        for action, seconds in self.motif_steps:
            if action not in ("play", "pause") or seconds <= 0:
                raise ValueError(f"bad motif step {(action, seconds)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        videos = tuple(
            SynthVideo(
                video_id=str(v["id"]),
                length_s=float(v["length_s"]),
                quiz_id=str(v.get("quiz", v["id"])),
                cfa_rate=float(v.get("cfa_rate", 0.5)),
                signal_block=v.get("signal_block"),
                fidelity=float(v.get("fidelity", 0.9)),
            )
            for v in doc["videos"]
        )
        motif = doc.get("motif", {})
        return cls(
            n_users=int(doc["n_users"]),
            videos=videos,
            block_s=float(doc.get("block_s", 30.0)),
            p_watch=float(doc.get("p_watch", 0.5)),
            boundary_jitter_s=float(doc.get("boundary_jitter_s", 3.0)),
            pause_rate=float(doc.get("pause_rate", 0.3)),
            rate_change_rate=float(doc.get("rate_change_rate", 0.1)),
            noise_rate=float(doc.get("noise_rate", 0.0)),
            no_click_rate=float(doc.get("no_click_rate", 0.0)),
            motif_steps=tuple(
                (str(a), float(s)) for a, s in motif.get("steps", [])
            ),
            motif_rate_cfa=float(motif.get("rate_cfa", 0.0)),
            motif_rate_noncfa=float(motif.get("rate_noncfa", 0.0)),
        )


@dataclass
class SynthResult:
    clicks: list[RawClick]
    submissions: list[Submission]
    catalog: VideoCatalog
    ground_truth: dict

    def catalog_json(self) -> str:
        videos = [
            {
                "id": v.video_id,
                "length_s": v.length_s,
                "quiz": v.quiz_id,
                "order": v.order,
            }
            for v in sorted(self.catalog.videos.values(), key=lambda e: e.order)
        ]
        return json.dumps({"videos": videos}, indent=2)


def _segments_for(
    spec: SynthSpec, video: SynthVideo, rng: np.random.Generator
) -> tuple[list[tuple[float, float]], bool]:
    """Watched (start, end) spans and whether the signal block was visited."""
    n_blocks = max(1, int(video.length_s // spec.block_s))
    watched = rng.random(n_blocks) < spec.p_watch
    visited_signal = False
    if video.signal_block is not None and video.signal_block < n_blocks:
        visited_signal = bool(rng.random() < 0.5)
        watched[video.signal_block] = visited_signal
    if not watched.any():
        watched[int(rng.integers(0, n_blocks))] = True

    segments: list[tuple[float, float]] = []
    for block in np.flatnonzero(watched):
        start = block * spec.block_s
        end = min((block + 1) * spec.block_s, video.length_s)
        if segments and abs(segments[-1][1] - start) < 1e-9:
            segments[-1] = (segments[-1][0], end)
        else:
            segments.append((start, end))

    if spec.boundary_jitter_s > 0:
        jittered: list[tuple[float, float]] = []
        floor = 0.0
        for start, end in segments:
            j1, j2 = rng.uniform(-spec.boundary_jitter_s, spec.boundary_jitter_s, 2)
            start = min(max(start + j1, floor), video.length_s - 1.0)
            end = max(min(end + j2, video.length_s), start + 1.0)
            jittered.append((start, end))
            floor = end + 0.5
        segments = [s for s in jittered if s[1] > s[0]]
    return segments, visited_signal


def _emit_trajectory(
    spec: SynthSpec,
    video: SynthVideo,
    user_id: str,
    segments: list[tuple[float, float]],
    plant_motif: bool,
    rng: np.random.Generator,
) -> tuple[list[RawClick], list[int]]:
    clicks: list[RawClick] = []
    insertions: list[int] = []
    t = _T0 + float(rng.integers(0, 10_000))
    rate = 1.0

    def add(event: str, position: float, state: str, new_rate: float | None = None) -> None:
        nonlocal rate
        if new_rate is not None:
            rate = new_rate
        clicks.append(
            RawClick(user_id, video.video_id, event, round(position, 3), t, state, rate)
        )

    motif_segment = int(rng.integers(0, len(segments))) if plant_motif else -1
    position = 0.0

    def play_to(target: float) -> None:
        nonlocal t, position
        t += max(0.0, target - position) / rate
        position = max(position, target)

    for k, (start, end) in enumerate(segments):
        if k == 0:
            add("play", start, "playing")
        position = start
        if k == motif_segment and end - start > 2.0:
            insertions.append(len(clicks))
            for action, seconds in spec.motif_steps:
                if action == "play":
                    play_to(min(position + seconds, end - 0.5))
                else:
                    add("pause", position, "paused")
                    t += seconds
                    add("play", position, "playing")
        elif rng.random() < spec.pause_rate and end - start > 4.0:
            play_to(position + (end - position) * rng.uniform(0.3, 0.7))
            add("pause", position, "paused")
            t += float(rng.uniform(2.0, 60.0))
            add("play", position, "playing")
        if rng.random() < spec.rate_change_rate and end - position > 4.0:
            play_to(position + (end - position) * 0.5)
            add(
                "ratechange",
                position,
                "playing",
                new_rate=float(rng.choice([0.75, 1.0, 1.25, 1.5])),
            )
        play_to(end)
        if k + 1 < len(segments):
            add("skip", segments[k + 1][0], "playing")
            position = segments[k + 1][0]
        elif rng.random() < 0.2 and position > 30.0:
            # Occasional revision: rewind and rewatch a stretch, then stop.
            back_to = position * float(rng.uniform(0.2, 0.6))
            add("skip", back_to, "playing")
            position = back_to
            play_to(min(back_to + float(rng.uniform(5.0, 25.0)), video.length_s))
            add("pause", position, "paused")
        else:
            add("pause", position, "paused")

    if rng.random() < spec.noise_rate:
        where = int(rng.integers(0, len(clicks)))
        stall = clicks[where]
        clicks.insert(
            where + 1,
            RawClick(
                user_id,
                video.video_id,
                "stall",
                stall.position_s,
                stall.timestamp_s + 0.5,
                stall.state,
                stall.rate,
            ),
        )
    return clicks, insertions


def generate(spec: SynthSpec, seed: int) -> SynthResult:
    """Deterministically generate clicks, submissions, catalog, and truth."""
    entries = [
        VideoEntry(v.video_id, v.length_s, v.quiz_id, order)
        for order, v in enumerate(spec.videos)
    ]
    catalog = VideoCatalog(entries)
    clicks: list[RawClick] = []
    submissions: list[Submission] = []
    truth_pairs: list[dict] = []

    for ui in range(spec.n_users):
        user_id = f"u{ui:05d}"
        for vi, video in enumerate(spec.videos):
            rng = rng_for(seed, _NS_USER, ui, vi)
            if rng.random() < spec.no_click_rate:
                cfa = int(rng.random() < video.cfa_rate)
                submissions.append(Submission(user_id, video.quiz_id, cfa=cfa))
                truth_pairs.append(
                    {"u": user_id, "v": video.video_id, "cfa": cfa, "empty": True}
                )
                continue
            segments, visited_signal = _segments_for(spec, video, rng)
            if video.signal_block is not None:
                flip = rng.random() >= video.fidelity
                cfa = int(visited_signal) ^ int(flip)
            else:
                cfa = int(rng.random() < video.cfa_rate)
            plant = bool(
                spec.motif_steps
                and rng.random()
                < (spec.motif_rate_cfa if cfa else spec.motif_rate_noncfa)
            )
            uv_clicks, insertions = _emit_trajectory(
                spec, video, user_id, segments, plant, rng
            )
            clicks.extend(uv_clicks)
            submissions.append(Submission(user_id, video.quiz_id, cfa=cfa))
            truth_pairs.append(
                {
                    "u": user_id,
                    "v": video.video_id,
                    "cfa": cfa,
                    "visited_signal": visited_signal,
                    "segments": [[round(a, 3), round(b, 3)] for a, b in segments],
                    "motif_insertions": insertions,
                }
            )

    truth = {
        "seed": seed,
        "n_users": spec.n_users,
        "block_s": spec.block_s,
        "pairs": truth_pairs,
    }
    return SynthResult(clicks, submissions, catalog, truth)


def symbol_corpus(
    n_sequences: int,
    length: int,
    seed: int,
    plant: tuple[str, ...] = (),
    plant_rate: float = 0.0,
    cfa_rate: float = 0.5,
    video_id: str = "v0",
) -> list[EventSequence]:
    """Uniform-random symbol sequences with an optional planted motif.

    Planted occurrences overwrite a random window at the given per-sequence
    rate; labels are independent coin flips.  Used as the discovery oracle
    corpus: the planted string is the only non-background structure.
    """
    rng = np.random.default_rng(seed)
    sequences: list[EventSequence] = []
    for i in range(n_sequences):
        symbols = [EVENT_ALPHABET[j] for j in rng.integers(0, len(EVENT_ALPHABET), length)]
        if plant and rng.random() < plant_rate:
            offset = int(rng.integers(0, length - len(plant) + 1))
            symbols[offset : offset + len(plant)] = list(plant)
        sequences.append(
            EventSequence(
                user_id=f"u{i}",
                video_id=video_id,
                cfa=int(rng.random() < cfa_rate),
                symbols=tuple(symbols),
            )
        )
    return sequences


def clicks_ndjson(clicks: Iterable[RawClick]) -> str:
    return "".join(c.to_json() + "\n" for c in clicks)


def submissions_ndjson(submissions: Iterable[Submission]) -> str:
    lines = []
    for s in submissions:
        if s.cfa is not None:
            lines.append(json.dumps({"u": s.user_id, "q": s.quiz_id, "cfa": s.cfa}))
        else:
            lines.append(
                json.dumps(
                    {
                        "u": s.user_id,
                        "q": s.quiz_id,
                        "attempt": s.attempt,
                        "correct": s.correct,
                    }
                )
            )
    return "".join(line + "\n" for line in lines)
