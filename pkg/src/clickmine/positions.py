"""Position-sequence encoding: visited video intervals with dwell times.

A video of length ``h`` is cut into uniform intervals of width ``w``;
indices run from 0 to ``floor(h/w)`` (the last index is reachable only at
the very end of the video).  Each trajectory becomes the ordered list of
interval indices visited, walking through every interval a play crosses,
appending the landing interval of each click, and breaking into independent
segments at masked gaps.  Dwell times tile the wall-clock span of each
segment exactly: play time is split at interval boundaries at the active
playback rate, and pause time accrues to the interval paused in.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from clickmine.denoise import DenoiseConfig, combine_events, gap_mask
from clickmine.ingest import RawClick, UVPair

log = logging.getLogger("clickmine")

__all__ = [
    "PositionSequence",
    "BACKWARD",
    "REPEAT",
    "DIRECT",
    "FORWARD",
    "TRANSITION_NAMES",
    "n_intervals",
    "encode_positions",
    "classify_transition",
    "transition_mix",
]

# Transition classes: k=1 backward, k=2 repeat, k=3 direct, k=4 forward.
BACKWARD, REPEAT, DIRECT, FORWARD = 1, 2, 3, 4
TRANSITION_NAMES = {BACKWARD: "backward", REPEAT: "repeat", DIRECT: "direct", FORWARD: "forward"}


def n_intervals(video_length_s: float, width_s: float) -> int:
    """Number of full intervals; valid indices are 0 .. n_intervals inclusive."""
    return int(video_length_s // width_s)


def classify_transition(a: int, b: int) -> int:
    """Class of the ordered index pair (a, b); total over all pairs."""
    if b < a:
        return BACKWARD
    if b == a:
        return REPEAT
    if b == a + 1:
        return DIRECT
    return FORWARD


@dataclass
class PositionSequence:
    """Interval indices visited by one UV pair, with per-entry dwell times.

    ``breaks`` lists entry indices that start a new segment (the first
    segment is implicit); no transition spans a break.
    """

    user_id: str
    video_id: str
    cfa: int | None
    width_s: float
    entries: list[tuple[int, float]]
    breaks: list[int] = field(default_factory=list)

    def indices(self) -> list[int]:
        return [idx for idx, _ in self.entries]

    def segments(self) -> Iterator[list[tuple[int, float]]]:
        bounds = [0, *self.breaks, len(self.entries)]
        for lo, hi in zip(bounds, bounds[1:]):
            if hi > lo:
                yield self.entries[lo:hi]

    def transitions(self) -> Iterator[tuple[int, int]]:
        """Consecutive index pairs within segments."""
        for segment in self.segments():
            for (a, _), (b, _) in zip(segment, segment[1:]):
                yield a, b

    def segment_heads(self) -> list[int]:
        """First visited index of each segment."""
        return [segment[0][0] for segment in self.segments()]

    def to_json(self) -> str:
        record = {
            "u": self.user_id,
            "v": self.video_id,
            "cfa": self.cfa,
            "w": self.width_s,
            "seq": [[idx, dwell] for idx, dwell in self.entries],
            "breaks": self.breaks,
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "PositionSequence":
        record = json.loads(line)
        cfa = record["cfa"]
        return cls(
            user_id=str(record["u"]),
            video_id=str(record["v"]),
            cfa=None if cfa is None else int(cfa),
            width_s=float(record["w"]),
            entries=[(int(i), float(d)) for i, d in record["seq"]],
            breaks=[int(i) for i in record["breaks"]],
        )


class _Walker:
    """Accumulates entries while attributing wall-clock time to intervals."""

    def __init__(self, width: float, last_index: int) -> None:
        self.width = width
        self.last_index = last_index
        self.entries: list[tuple[int, float]] = []
        self.breaks: list[int] = []

    def _capped(self, position: float) -> int:
        return min(int(position // self.width), self.last_index)

    def start_segment(self, position: float) -> None:
        if self.entries:
            self.breaks.append(len(self.entries))
        self.entries.append((self._capped(position), 0.0))

    def append(self, index: int, dwell: float = 0.0) -> None:
        self.entries.append((index, dwell))

    def accrue(self, dwell: float) -> None:
        idx, current = self.entries[-1]
        self.entries[-1] = (idx, current + dwell)

    def play(self, p_from: float, p_to: float, rate: float, wall: float) -> None:
        """Walk playback from p_from to p_to, splitting time at boundaries.

        Intervals strictly after the current one are appended; the leftover
        of ``wall`` beyond the traversal time (playback pinned at the video
        end) accrues to the final interval reached.
        """
        a = self.entries[-1][0]
        b = self._capped(p_to)
        w = self.width
        cursor = p_from
        for idx in range(a, b + 1):
            boundary = min((idx + 1) * w, p_to)
            step = max(0.0, boundary - cursor)
            if idx == a:
                self.accrue(step / rate)
            else:
                self.append(idx, step / rate)
            cursor = max(cursor, boundary)
        leftover = wall - (p_to - p_from) / rate
        if leftover > 1e-12:
            self.accrue(leftover)


def encode_positions(
    pair: UVPair,
    width_s: float,
    video_length_s: float,
    cfg: DenoiseConfig = DenoiseConfig(),
    literal_skip_rule: bool = False,
    warn_single_interval: bool = True,
) -> PositionSequence:
    """Encode one UV pair as a sequence of visited interval indices.

    For each unmasked click pair: while paused only the landing interval of
    the next click is appended; while playing the walk covers every interval
    up to the position reached when the next click fires (projected at the
    active rate, pinned at the video end) and then appends the landing
    interval.  Masked pairs split the output into independent segments.  A
    final click that leaves the player running is closed by walking to the
    projected end of the video.

    ``literal_skip_rule`` switches to the alternate pair rule that branches
    on the current click being a skip; it does not reproduce the reference
    traversal (no repeated landing index) and is kept for comparison only.
    """
    if width_s <= 0:
        raise ValueError("interval width must be positive")
    if width_s > video_length_s and warn_single_interval:
        log.warning(
            "width %.3gs exceeds video length %.3gs; single-interval encoding",
            width_s,
            video_length_s,
        )
    clicks = combine_events(pair.clicks, cfg)
    masked = gap_mask(clicks, cfg, video_length_s)
    walker = _Walker(width_s, n_intervals(video_length_s, width_s))
    if not clicks:
        return PositionSequence(pair.user_id, pair.video_id, pair.cfa, width_s, [], [])

    walker.start_segment(clicks[0].position_s)
    for i in range(len(clicks) - 1):
        cur, nxt = clicks[i], clicks[i + 1]
        if i in masked:
            walker.start_segment(nxt.position_s)
            continue
        wall = nxt.timestamp_s - cur.timestamp_s
        if cur.state == "paused":
            walker.accrue(wall)
            walker.append(walker._capped(nxt.position_s))
        elif literal_skip_rule:
            p_prime = _pre_skip_position(clicks, i, masked, video_length_s)
            _literal_pair(walker, cur, nxt, p_prime, wall)
        else:
            reached = min(cur.position_s + wall * cur.rate, video_length_s)
            walker.play(cur.position_s, reached, cur.rate, wall)
            walker.append(walker._capped(nxt.position_s))

    last = clicks[-1]
    if last.state == "playing" and last.position_s < video_length_s:
        remaining = video_length_s - last.position_s
        walker.play(last.position_s, video_length_s, last.rate, remaining / last.rate)

    return PositionSequence(
        pair.user_id, pair.video_id, pair.cfa, width_s, walker.entries, walker.breaks
    )


def _pre_skip_position(
    clicks: list[RawClick], i: int, masked: set[int], video_length_s: float
) -> float:
    """Position right before click i fired, projected from its predecessor."""
    if i == 0:
        return 0.0
    prev = clicks[i - 1]
    if prev.state == "playing" and (i - 1) not in masked:
        dt = clicks[i].timestamp_s - prev.timestamp_s
        return min(prev.position_s + dt * prev.rate, video_length_s)
    return prev.position_s


def _literal_pair(
    walker: _Walker, cur: RawClick, nxt: RawClick, p_prime: float, wall: float
) -> None:
    """Alternate pair rule branching on the current click being a skip.

    Non-skip: run from the next interval through the landing interval of the
    following click.  Skip: run through the interval of the current click's
    pre-skip position, then the landing interval.  Dwell attribution here is
    coarse (one interval per playback-rate step, remainder on the last
    entry).
    """
    w = walker.width
    start = walker.entries[-1][0] + 1
    if cur.event_type == "skip":
        run_end = walker._capped(p_prime)
    else:
        run_end = walker._capped(nxt.position_s)
    for idx in range(start, run_end + 1):
        walker.append(idx, w / cur.rate)
    if cur.event_type == "skip":
        walker.append(walker._capped(nxt.position_s))
    leftover = wall - max(0, run_end - start + 1) * w / cur.rate
    if leftover > 0 and walker.entries:
        walker.accrue(leftover)


def transition_mix(
    pairs: Iterable[UVPair],
    video_lengths: dict[str, float],
    w_grid: Sequence[float],
    cfg: DenoiseConfig = DenoiseConfig(),
) -> dict[float, tuple[float, float, float, float]]:
    """Fractions of the four transition classes per interval width.

    Transitions are pooled within each video, normalized to fractions, and
    the fractions averaged over videos (videos with no transitions at a
    width are skipped for that width).
    """
    by_video: dict[str, list[UVPair]] = {}
    for pair in pairs:
        by_video.setdefault(pair.video_id, []).append(pair)

    out: dict[float, tuple[float, float, float, float]] = {}
    for w in w_grid:
        per_video: list[tuple[float, float, float, float]] = []
        for video_id, members in sorted(by_video.items()):
            counts = [0, 0, 0, 0]
            for pair in members:
                seq = encode_positions(pair, w, video_lengths[video_id], cfg)
                for a, b in seq.transitions():
                    counts[classify_transition(a, b) - 1] += 1
            total = sum(counts)
            if total:
                per_video.append(tuple(c / total for c in counts))
        if per_video:
            out[w] = tuple(
                sum(v[k] for v in per_video) / len(per_video) for k in range(4)
            )
        else:
            out[w] = (0.0, 0.0, 0.0, 0.0)
    return out
