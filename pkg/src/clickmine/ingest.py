"""Parsing of clickstream/quiz exports and assembly of labeled User-Video pairs.

Input is line-oriented NDJSON (one click or submission per line) plus a JSON
video catalog.  Malformed lines never abort a stream: each yields a
positional :class:`ParseError` and parsing continues.  Assembly merges the
physical videos of a quiz group into one logical video (positions offset by
the cumulative length of preceding members), orders clicks chronologically,
and labels each pair with the Correct-on-First-Attempt outcome of the
matching quiz submission.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

log = logging.getLogger("clickmine")

CLICK_EVENT_TYPES = frozenset(
    {"play", "pause", "ratechange", "skip", "null", "stall", "error"}
)
NOISE_EVENT_TYPES = frozenset({"null", "stall", "error"})
PLAYER_STATES = frozenset({"playing", "paused"})

# Coursera exposes playback speeds 0.5 .. 2.0 in steps of 0.25.
RATE_MIN = 0.5
RATE_MAX = 2.0
RATE_STEP = 0.25

_CLICK_KEYS = ("u", "v", "e", "p", "t", "s", "r")


class CatalogError(ValueError):
    """Raised for inconsistent video catalog / quiz group declarations."""


@dataclass(frozen=True)
class RawClick:
    """One parsed clickstream log line.

    ``position_s`` is the playback position right after the event fired,
    ``state`` the player state resulting from it, and ``rate`` the playback
    speed in effect afterwards.  ``source_id`` keeps the physical video id
    once clicks are remapped onto logical (quiz-level) videos.
    """

    user_id: str
    video_id: str
    event_type: str
    position_s: float
    timestamp_s: float
    state: str
    rate: float = 1.0
    source_id: str | None = None

    @property
    def source(self) -> str:
        return self.source_id if self.source_id is not None else self.video_id

    def to_json(self) -> str:
        """Canonical one-line NDJSON form (fixed key order)."""
        record = {
            "u": self.user_id,
            "v": self.video_id,
            "e": self.event_type,
            "p": self.position_s,
            "t": self.timestamp_s,
            "s": self.state,
            "r": self.rate,
        }
        return json.dumps(record, separators=(",", ":"))


@dataclass(frozen=True)
class ParseError:
    """Positional description of a rejected input line."""

    line_no: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line_no}: {self.message}"


@dataclass(frozen=True)
class Submission:
    """One quiz submission row, either raw attempts or a precomputed label."""

    user_id: str
    quiz_id: str
    attempt: int | None = None
    correct: bool | None = None
    cfa: int | None = None


@dataclass
class UVPair:
    """A user's chronologically ordered trajectory on one logical video."""

    user_id: str
    video_id: str
    clicks: list[RawClick]
    cfa: int | None = None

    def __post_init__(self) -> None:
        times = [c.timestamp_s for c in self.clicks]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("UVPair clicks must be chronologically ordered")


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    length_s: float
    quiz_id: str
    order: int


@dataclass(frozen=True)
class LogicalVideo:
    """All physical videos of one quiz, concatenated in release order."""

    quiz_id: str
    length_s: float
    order: int
    members: tuple[str, ...]
    offsets: dict[str, float] = field(hash=False)


class VideoCatalog:
    """Video metadata indexed by id, with quiz-group resolution."""

    def __init__(self, videos: Iterable[VideoEntry]) -> None:
        self.videos: dict[str, VideoEntry] = {}
        for v in videos:
            if v.video_id in self.videos:
                raise CatalogError(f"duplicate video id {v.video_id!r}")
            if v.length_s <= 0:
                raise CatalogError(f"video {v.video_id!r} has non-positive length")
            self.videos[v.video_id] = v
        orders = [v.order for v in self.videos.values()]
        if len(set(orders)) != len(orders):
            raise CatalogError("duplicate chronological order values in catalog")

    @classmethod
    def from_json(cls, text: str) -> "VideoCatalog":
        doc = json.loads(text)
        entries = [
            VideoEntry(
                video_id=str(item["id"]),
                length_s=float(item["length_s"]),
                quiz_id=str(item["quiz"]),
                order=int(item["order"]),
            )
            for item in doc["videos"]
        ]
        return cls(entries)

    def length(self, video_id: str) -> float:
        return self.videos[video_id].length_s


def _parse_click_record(record: dict) -> RawClick:
    missing = [k for k in _CLICK_KEYS[:-1] if k not in record]
    if missing:
        raise ValueError(f"missing field(s) {missing}")
    event_type = record["e"]
    if event_type not in CLICK_EVENT_TYPES:
        raise ValueError(f"unknown event_type {event_type!r}")
    position = float(record["p"])
    if position < 0:
        raise ValueError(f"negative position {position}")
    timestamp = float(record["t"])
    state = record["s"]
    if state not in PLAYER_STATES:
        raise ValueError(f"unknown player state {state!r}")
    rate = 1.0
    if "r" in record and record["r"] is not None:
        rate = float(record["r"])
        if not RATE_MIN <= rate <= RATE_MAX:
            raise ValueError(f"rate {rate} outside [{RATE_MIN}, {RATE_MAX}]")
        steps = (rate - RATE_MIN) / RATE_STEP
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"rate {rate} not a {RATE_STEP} multiple")
    return RawClick(
        user_id=str(record["u"]),
        video_id=str(record["v"]),
        event_type=event_type,
        position_s=position,
        timestamp_s=timestamp,
        state=state,
        rate=rate,
    )


def parse_clicks(stream: Iterable[str]) -> tuple[list[RawClick], list[ParseError]]:
    """Parse an NDJSON click stream into clicks plus per-line errors."""
    clicks: list[RawClick] = []
    errors: list[ParseError] = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("line is not a JSON object")
            clicks.append(_parse_click_record(record))
        except (ValueError, TypeError, KeyError) as exc:
            errors.append(ParseError(line_no, str(exc)))
    return clicks, errors


def parse_submissions(stream: Iterable[str]) -> tuple[list[Submission], list[ParseError]]:
    """Parse an NDJSON submission stream (attempt rows or precomputed labels)."""
    subs: list[Submission] = []
    errors: list[ParseError] = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            user = str(record["u"])
            quiz = str(record["q"])
            if "cfa" in record:
                cfa = int(record["cfa"])
                if cfa not in (0, 1):
                    raise ValueError(f"cfa must be 0 or 1, got {record['cfa']!r}")
                subs.append(Submission(user, quiz, cfa=cfa))
            else:
                attempt = int(record["attempt"])
                if attempt < 1:
                    raise ValueError(f"attempt must be >= 1, got {attempt}")
                subs.append(
                    Submission(user, quiz, attempt=attempt, correct=bool(record["correct"]))
                )
        except (ValueError, TypeError, KeyError) as exc:
            errors.append(ParseError(line_no, str(exc)))
    return subs, errors


def derive_cfa_labels(
    submissions: Iterable[Submission],
) -> tuple[dict[tuple[str, str], int], list[str]]:
    """Resolve (user, quiz) -> CFA: 1 iff the first attempt was correct.

    Precomputed labels take precedence over attempt rows; conflicting
    precomputed labels keep the first one seen, with a warning.
    """
    explicit: dict[tuple[str, str], int] = {}
    first_attempts: dict[tuple[str, str], tuple[int, bool]] = {}
    warnings: list[str] = []
    for sub in submissions:
        key = (sub.user_id, sub.quiz_id)
        if sub.cfa is not None:
            if key in explicit and explicit[key] != sub.cfa:
                warnings.append(f"conflicting cfa labels for {key}; keeping the first")
            else:
                explicit.setdefault(key, sub.cfa)
        else:
            assert sub.attempt is not None and sub.correct is not None
            best = first_attempts.get(key)
            if best is None or sub.attempt < best[0]:
                first_attempts[key] = (sub.attempt, sub.correct)
    labels = {key: int(correct) for key, (_, correct) in first_attempts.items()}
    labels.update(explicit)
    return labels, warnings


def map_videos_to_quizzes(catalog: VideoCatalog) -> dict[str, LogicalVideo]:
    """Merge each quiz's physical videos into one logical video.

    Members are ordered by chronological index and must be contiguous in the
    global ordering; a quiz group interleaved with another is a
    configuration error.  Member positions are offset by the cumulative
    length of the preceding members.
    """
    by_quiz: dict[str, list[VideoEntry]] = {}
    for entry in catalog.videos.values():
        by_quiz.setdefault(entry.quiz_id, []).append(entry)

    logical: dict[str, LogicalVideo] = {}
    ranges: list[tuple[int, int, str]] = []
    for quiz_id, members in by_quiz.items():
        members.sort(key=lambda v: v.order)
        orders = [m.order for m in members]
        ranges.append((orders[0], orders[-1], quiz_id))
        offsets: dict[str, float] = {}
        running = 0.0
        for m in members:
            offsets[m.video_id] = running
            running += m.length_s
        logical[quiz_id] = LogicalVideo(
            quiz_id=quiz_id,
            length_s=running,
            order=orders[0],
            members=tuple(m.video_id for m in members),
            offsets=offsets,
        )

    ranges.sort()
    for (_, hi_a, quiz_a), (lo_b, _, quiz_b) in zip(ranges, ranges[1:]):
        if lo_b <= hi_a:
            raise CatalogError(
                f"quiz groups {quiz_a!r} and {quiz_b!r} overlap in video order"
            )
    return logical


def _dedupe_sorted(clicks: list[RawClick], warnings: list[str]) -> list[RawClick]:
    """Drop exact duplicates; keep input order for distinct ties, warning once."""
    out: list[RawClick] = []
    warned = False
    for click in clicks:
        if out and click == out[-1]:
            continue
        if out and click.timestamp_s == out[-1].timestamp_s and not warned:
            warnings.append(
                f"equal timestamps for user {click.user_id!r} on "
                f"{click.video_id!r}; keeping input order"
            )
            warned = True
        out.append(click)
    return out


@dataclass
class AssemblyResult:
    labeled: list[UVPair]
    unlabeled: list[UVPair]
    warnings: list[str]
    dropped_noise_pairs: int = 0


def assemble_uv_pairs(
    clicks: Iterable[RawClick],
    submissions: Iterable[Submission],
    catalog: VideoCatalog,
) -> AssemblyResult:
    """Build labeled UV pairs from parsed clicks and submissions.

    Clicks are remapped onto logical (quiz-level) videos with offset
    positions, sorted by timestamp (stable for ties), and deduplicated.
    Pairs containing any null/stall/error click are removed entirely.  A
    submission without clicks yields an empty-trajectory pair; clicks
    without a submission land in the unlabeled bucket.
    """
    warnings: list[str] = []
    logical = map_videos_to_quizzes(catalog)
    labels, label_warnings = derive_cfa_labels(submissions)
    warnings.extend(label_warnings)
    for user_id, quiz_id in list(labels):
        if quiz_id not in logical:
            warnings.append(f"submission references unknown quiz {quiz_id!r}; skipped")
            del labels[(user_id, quiz_id)]

    grouped: dict[tuple[str, str], list[RawClick]] = {}
    for click in clicks:
        entry = catalog.videos.get(click.video_id)
        if entry is None:
            warnings.append(f"click on unknown video {click.video_id!r}; dropped")
            continue
        video = logical[entry.quiz_id]
        offset = video.offsets[click.video_id]
        mapped = replace(
            click,
            video_id=video.quiz_id,
            position_s=click.position_s + offset,
            source_id=click.video_id,
        )
        if mapped.position_s > video.length_s + 1.0:
            warnings.append(
                f"position {mapped.position_s:.1f}s beyond video "
                f"{video.quiz_id!r} length {video.length_s:.1f}s; click dropped"
            )
            continue
        grouped.setdefault((click.user_id, video.quiz_id), []).append(mapped)

    labeled: list[UVPair] = []
    unlabeled: list[UVPair] = []
    dropped = 0
    for key in sorted(grouped):
        user_id, quiz_id = key
        ordered = sorted(grouped[key], key=lambda c: c.timestamp_s)
        ordered = _dedupe_sorted(ordered, warnings)
        if any(c.event_type in NOISE_EVENT_TYPES for c in ordered):
            dropped += 1
            labels.pop(key, None)
            continue
        pair = UVPair(user_id, quiz_id, ordered, cfa=labels.pop(key, None))
        (unlabeled if pair.cfa is None else labeled).append(pair)

    # Submissions whose user produced no clicks: empty trajectories, retained.
    for (user_id, quiz_id), cfa in sorted(labels.items()):
        labeled.append(UVPair(user_id, quiz_id, [], cfa=cfa))

    labeled.sort(key=lambda p: (p.video_id, p.user_id))
    unlabeled.sort(key=lambda p: (p.video_id, p.user_id))
    for message in warnings:
        log.warning(message)
    return AssemblyResult(labeled, unlabeled, warnings, dropped)


def iter_ndjson(path) -> Iterator[str]:
    """Yield lines of a text file without loading it whole."""
    with open(path, "r", encoding="utf-8") as handle:
        yield from handle
