"""Canonical event derivation and the 18-symbol quantized sequence encoding.

A denoised trajectory becomes a stream of seven event kinds: plays and
pauses fill the gaps between clicks (carrying durations, and lengths for
plays), skips split into backward/forward with a reconstructed pre-skip
position, and rate changes split by direction.  Play/pause durations and
skip lengths are then bucketed against corpus quartiles, expanding long
plays into chunks, to produce sequences over a fixed 18-symbol alphabet.
"""

from __future__ import annotations

import json
import logging
import math
import urllib.parse
from dataclasses import dataclass
from typing import Iterable, Sequence

from clickmine.denoise import DenoiseConfig, combine_events, gap_mask
from clickmine.ingest import UVPair
from clickmine.stats import quartiles as _type7_quartiles

log = logging.getLogger("clickmine")

__all__ = [
    "CanonicalEvent",
    "EventSequence",
    "QuartileTable",
    "EVENT_ALPHABET",
    "FASTA_LETTERS",
    "derive_events",
    "compute_quartiles",
    "compute_quartile_table",
    "quantize",
    "encode_event_sequence",
    "export_fasta",
    "import_fasta",
]

PLAY, PAUSE, SKIP_BACK, SKIP_FWD = "Pl", "Pa", "Sb", "Sf"
RATE_FAST, RATE_SLOW, RATE_DEFAULT = "Rf", "Rs", "Rd"

QUANTIZED_KINDS = (PLAY, PAUSE, SKIP_BACK, SKIP_FWD)

# Bucket counts per kind: plays chunk within {1..3}, the rest use {1..4}.
_BUCKETS = {PLAY: 3, PAUSE: 4, SKIP_BACK: 4, SKIP_FWD: 4}

EVENT_ALPHABET: tuple[str, ...] = (
    "Pl1", "Pl2", "Pl3",
    "Pa1", "Pa2", "Pa3", "Pa4",
    "Sb1", "Sb2", "Sb3", "Sb4",
    "Sf1", "Sf2", "Sf3", "Sf4",
    "Rf", "Rs", "Rd",
)

# First 18 non-ambiguous protein letters, mapped 1:1 onto EVENT_ALPHABET.
FASTA_LETTERS = "ACDEFGHIKLMNPQRSTV"

SYMBOL_INDEX = {sym: i for i, sym in enumerate(EVENT_ALPHABET)}
_LETTER_TO_SYMBOL = dict(zip(FASTA_LETTERS, EVENT_ALPHABET))

# Skip lengths below this are measurement noise and excluded from quartile
# estimation (the events themselves are kept).
MIN_SKIP_SAMPLE_S = 0.1


@dataclass(frozen=True)
class CanonicalEvent:
    """One derived event: a kind plus its optional duration and length.

    Plays carry both, pauses a duration only, skips a length only, and rate
    changes neither.
    """

    kind: str
    duration_s: float | None = None
    length_s: float | None = None

    def __post_init__(self) -> None:
        has_d, has_l = self.duration_s is not None, self.length_s is not None
        expected = {
            PLAY: (True, True),
            PAUSE: (True, False),
            SKIP_BACK: (False, True),
            SKIP_FWD: (False, True),
            RATE_FAST: (False, False),
            RATE_SLOW: (False, False),
            RATE_DEFAULT: (False, False),
        }[self.kind]
        if (has_d, has_l) != expected:
            raise ValueError(f"{self.kind} with duration={has_d} length={has_l}")
        if (self.duration_s or 0.0) < 0 or (self.length_s or 0.0) < 0:
            raise ValueError("durations and lengths must be non-negative")


@dataclass(frozen=True)
class EventSequence:
    """Quantized symbol sequence for one UV pair."""

    user_id: str
    video_id: str
    cfa: int | None
    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        bad = [s for s in self.symbols if s not in SYMBOL_INDEX]
        if bad:
            raise ValueError(f"symbols outside the 18-event alphabet: {bad[:3]}")

    def to_json(self) -> str:
        record = {
            "u": self.user_id,
            "v": self.video_id,
            "cfa": self.cfa,
            "sym": list(self.symbols),
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "EventSequence":
        record = json.loads(line)
        cfa = record["cfa"]
        return cls(
            user_id=str(record["u"]),
            video_id=str(record["v"]),
            cfa=None if cfa is None else int(cfa),
            symbols=tuple(record["sym"]),
        )


class QuartileTable:
    """(Q1, Q2, Q3) per quantized kind, with optional sample bookkeeping."""

    def __init__(
        self,
        rows: dict[str, tuple[float, float, float]],
        counts: dict[str, int] | None = None,
    ) -> None:
        missing = [k for k in QUANTIZED_KINDS if k not in rows]
        if missing:
            raise ValueError(f"quartile table missing kinds: {missing}")
        for kind, (q1, q2, q3) in rows.items():
            if not q1 <= q2 <= q3:
                raise ValueError(f"unordered quartiles for {kind}: {(q1, q2, q3)}")
        self.rows = {k: tuple(float(x) for x in rows[k]) for k in QUANTIZED_KINDS}
        self.counts = dict(counts) if counts else None

    def __getitem__(self, kind: str) -> tuple[float, float, float]:
        return self.rows[kind]

    def fraction(self, kind: str) -> float | None:
        if not self.counts:
            return None
        total = sum(self.counts.values())
        return self.counts[kind] / total if total else None

    def to_json(self) -> str:
        doc = {kind: list(self.rows[kind]) for kind in QUANTIZED_KINDS}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QuartileTable":
        doc = json.loads(text)
        return cls({k: tuple(doc[k]) for k in QUANTIZED_KINDS})


def _pre_click_position(
    clicks, i: int, masked: set[int], video_length_s: float
) -> float:
    """Player position immediately before click i fired.

    Projected from the predecessor at its playback rate while playing, or
    carried over while paused.  A click with no usable predecessor (first
    click, or one across a masked gap) starts from the predecessor's resting
    position, or the video start if there is none.
    """
    if i == 0:
        return 0.0
    prev = clicks[i - 1]
    if prev.state == "playing" and (i - 1) not in masked:
        dt = clicks[i].timestamp_s - prev.timestamp_s
        return min(prev.position_s + dt * prev.rate, video_length_s)
    return prev.position_s


def derive_events(
    clicks,
    masked: set[int],
    video_length_s: float,
) -> list[CanonicalEvent]:
    """Turn a denoised click trajectory into canonical events.

    Click-anchored events (skips, rate changes) interleave with the
    play/pause events inferred between clicks, in timestamp order.  Masked
    pairs contribute no inter-click play/pause.  A trajectory whose final
    click leaves the player running is closed with a play lasting to the
    projected end of the video.
    """
    out: list[CanonicalEvent] = []
    n = len(clicks)
    for i, click in enumerate(clicks):
        if click.event_type == "skip":
            p_before = _pre_click_position(clicks, i, masked, video_length_s)
            length = abs(click.position_s - p_before)
            if length == 0.0:
                log.warning(
                    "zero-length skip at t=%s for user %r dropped",
                    click.timestamp_s,
                    click.user_id,
                )
            else:
                kind = SKIP_BACK if p_before > click.position_s else SKIP_FWD
                out.append(CanonicalEvent(kind, length_s=length))
        elif click.event_type == "ratechange":
            if click.rate > 1.0:
                out.append(CanonicalEvent(RATE_FAST))
            elif click.rate < 1.0:
                out.append(CanonicalEvent(RATE_SLOW))
            else:
                out.append(CanonicalEvent(RATE_DEFAULT))

        if i + 1 < n and i not in masked:
            succ = clicks[i + 1]
            duration = succ.timestamp_s - click.timestamp_s
            if click.state == "playing":
                # A skip jumps the recorded position, so the play's reach is
                # the reconstructed pre-skip position; other click types
                # record the position they fired at.
                if succ.event_type == "skip":
                    p_next = _pre_click_position(clicks, i + 1, masked, video_length_s)
                else:
                    p_next = succ.position_s
                out.append(
                    CanonicalEvent(
                        PLAY,
                        duration_s=duration,
                        length_s=max(0.0, p_next - click.position_s),
                    )
                )
            else:
                out.append(CanonicalEvent(PAUSE, duration_s=duration))

    if n and clicks[-1].state == "playing":
        remaining = video_length_s - clicks[-1].position_s
        if remaining > 0:
            out.append(
                CanonicalEvent(
                    PLAY,
                    duration_s=remaining / clicks[-1].rate,
                    length_s=remaining,
                )
            )
    return out


def _samples_for(events: Iterable[CanonicalEvent], kind: str) -> list[float]:
    if kind in (SKIP_BACK, SKIP_FWD):
        return [
            e.length_s
            for e in events
            if e.kind == kind and e.length_s >= MIN_SKIP_SAMPLE_S
        ]
    if kind in (PLAY, PAUSE):
        return [e.duration_s for e in events if e.kind == kind]
    raise ValueError(f"{kind} is not a quantized kind")


def compute_quartiles(
    events: Sequence[CanonicalEvent], kind: str
) -> tuple[tuple[float, float, float], int]:
    """Corpus quartiles for one kind, with its sample count.

    Raises when fewer than 4 samples exist; callers must then supply an
    externally computed QuartileTable instead.
    """
    samples = _samples_for(events, kind)
    if len(samples) < 4:
        raise ValueError(
            f"only {len(samples)} {kind} samples; supply an external quartile table"
        )
    return _type7_quartiles(samples), len(samples)


def compute_quartile_table(events: Sequence[CanonicalEvent]) -> QuartileTable:
    rows: dict[str, tuple[float, float, float]] = {}
    counts: dict[str, int] = {}
    for kind in QUANTIZED_KINDS:
        rows[kind], counts[kind] = compute_quartiles(events, kind)
    return QuartileTable(rows, counts)


def _bucket(value: float, qs: tuple[float, float, float]) -> int:
    """Index of the half-open interval [Q_{q-1}, Q_q) containing value."""
    for q, bound in enumerate(qs, start=1):
        if value < bound:
            return q
    return 4


def _play_chunks(duration: float, qs: tuple[float, float, float]) -> list[int]:
    """Greedy decomposition of a play duration into bucket chunks.

    Emits a medium-long chunk (3) and subtracts Q3 while the remainder
    exceeds Q3, then closes with the smallest bucket covering the rest.
    """
    q1, q2, q3 = qs
    if q3 <= 0:
        raise ValueError("play quartiles must be positive to chunk durations")
    chunks: list[int] = []
    remaining = duration
    while remaining > q3:
        chunks.append(3)
        remaining -= q3
    if remaining <= q1:
        chunks.append(1)
    elif remaining <= q2:
        chunks.append(2)
    else:
        chunks.append(3)
    return chunks


def quantize(
    events: Sequence[CanonicalEvent], table: QuartileTable
) -> list[str]:
    """Map canonical events onto the 18-symbol alphabet."""
    symbols: list[str] = []
    for event in events:
        if event.kind == PLAY:
            for q in _play_chunks(event.duration_s, table[PLAY]):
                symbols.append(f"Pl{q}")
        elif event.kind == PAUSE:
            symbols.append(f"Pa{_bucket(event.duration_s, table[PAUSE])}")
        elif event.kind in (SKIP_BACK, SKIP_FWD):
            symbols.append(f"{event.kind}{_bucket(event.length_s, table[event.kind])}")
        else:
            symbols.append(event.kind)
    return symbols


def encode_event_sequence(
    pair: UVPair,
    table: QuartileTable,
    video_length_s: float,
    cfg: DenoiseConfig = DenoiseConfig(),
) -> EventSequence:
    """Denoise, derive, and quantize one UV pair into an EventSequence."""
    clicks = combine_events(pair.clicks, cfg)
    masked = gap_mask(clicks, cfg, video_length_s)
    events = derive_events(clicks, masked, video_length_s)
    return EventSequence(
        user_id=pair.user_id,
        video_id=pair.video_id,
        cfa=pair.cfa,
        symbols=tuple(quantize(events, table)),
    )


def symbols_to_letters(symbols: Iterable[str]) -> str:
    return "".join(FASTA_LETTERS[SYMBOL_INDEX[s]] for s in symbols)


def letters_to_symbols(letters: str) -> tuple[str, ...]:
    return tuple(_LETTER_TO_SYMBOL[ch] for ch in letters)


def export_fasta(sequences: Iterable[EventSequence]) -> str:
    """FASTA text with one record per sequence; headers carry user|video|cfa."""
    parts: list[str] = []
    for seq in sequences:
        user = urllib.parse.quote(seq.user_id, safe="")
        video = urllib.parse.quote(seq.video_id, safe="")
        cfa = "" if seq.cfa is None else str(seq.cfa)
        parts.append(f">{user}|{video}|{cfa}\n{symbols_to_letters(seq.symbols)}\n")
    return "".join(parts)


def import_fasta(text: str) -> list[EventSequence]:
    """Inverse of export_fasta; reproduces symbol sequences exactly."""
    sequences: list[EventSequence] = []
    header: str | None = None
    body: list[str] = []

    def flush() -> None:
        if header is None:
            return
        user, video, cfa = header.split("|")
        sequences.append(
            EventSequence(
                user_id=urllib.parse.unquote(user),
                video_id=urllib.parse.unquote(video),
                cfa=int(cfa) if cfa else None,
                symbols=letters_to_symbols("".join(body)),
            )
        )

    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            header = line[1:]
            body = []
        else:
            body.append(line)
    flush()
    return sequences


def play_chunk_bound(duration: float, q3: float) -> int:
    """Upper bound on chunk count for a play of the given duration."""
    return int(math.ceil(duration / q3)) + 1 if q3 > 0 else 1
