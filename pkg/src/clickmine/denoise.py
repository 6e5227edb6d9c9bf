"""Removal of unintentional-behavior noise from click trajectories.

Two rules, applied per UV pair before any encoding:

* rapid runs of the same click type collapse into a single click that jumps
  to the run's final state (a user seeking or dialing in a playback rate);
* inter-click gaps that cannot represent continuous watching are masked, so
  encoders neither insert play/pause events across them nor connect
  position sequences over them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from clickmine.ingest import RawClick

__all__ = ["DenoiseConfig", "combine_events", "gap_mask"]


@dataclass(frozen=True)
class DenoiseConfig:
    """Thresholds for the two denoising rules.

    ``play_gap_s`` of ``None`` means "length of the video", resolved per
    pair at masking time.
    """

    combine_window_s: float = 5.0
    pause_gap_s: float = 1200.0
    play_gap_s: float | None = None

    def __post_init__(self) -> None:
        if self.combine_window_s <= 0 or self.pause_gap_s <= 0:
            raise ValueError("denoise thresholds must be positive")
        if self.play_gap_s is not None and self.play_gap_s <= 0:
            raise ValueError("play_gap_s must be positive or None")


def combine_events(
    clicks: list[RawClick], cfg: DenoiseConfig = DenoiseConfig()
) -> list[RawClick]:
    """Collapse runs of identical click types fired in rapid succession.

    A maximal run with successive gaps strictly below the combine window is
    replaced by one click carrying the first click's timestamp and the last
    click's position, state, and rate.  Boundary gaps exactly at the window
    keep clicks separate.  Idempotent: combined clicks never move closer
    together, so no new run can form.
    """
    out: list[RawClick] = []
    i = 0
    n = len(clicks)
    while i < n:
        j = i
        while (
            j + 1 < n
            and clicks[j + 1].event_type == clicks[i].event_type
            and clicks[j + 1].source == clicks[j].source
            and clicks[j + 1].timestamp_s - clicks[j].timestamp_s < cfg.combine_window_s
        ):
            j += 1
        if j == i:
            out.append(clicks[i])
        else:
            last = clicks[j]
            out.append(
                replace(
                    clicks[i],
                    position_s=last.position_s,
                    state=last.state,
                    rate=last.rate,
                )
            )
        i = j + 1
    return out


def gap_mask(
    clicks: list[RawClick],
    cfg: DenoiseConfig,
    video_length_s: float,
) -> set[int]:
    """Indices i of adjacent pairs (clicks[i], clicks[i+1]) to suppress.

    A pair is masked when the two clicks come from different source videos,
    or when the gap exceeds what continuous watching allows: 20 minutes
    while paused, the video length while playing (unless an explicit play
    gap threshold is configured).  Masking removes no clicks; downstream
    encoders insert no play/pause state across a masked pair and treat it
    as a break between independent segments.
    """
    play_gap = cfg.play_gap_s if cfg.play_gap_s is not None else video_length_s
    masked: set[int] = set()
    for i in range(len(clicks) - 1):
        a, b = clicks[i], clicks[i + 1]
        gap = b.timestamp_s - a.timestamp_s
        if a.source != b.source:
            masked.add(i)
        elif a.state == "paused" and gap > cfg.pause_gap_s:
            masked.add(i)
        elif a.state == "playing" and gap > play_gap:
            masked.add(i)
    return masked
