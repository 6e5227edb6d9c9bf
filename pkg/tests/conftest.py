from __future__ import annotations

import pytest

from clickmine.ingest import RawClick, VideoCatalog, VideoEntry


def click(
    event: str,
    position: float,
    t: float,
    state: str = "playing",
    rate: float = 1.0,
    user: str = "u1",
    video: str = "v1",
) -> RawClick:
    return RawClick(user, video, event, position, t, state, rate)


@pytest.fixture
def reference_trajectory() -> list[RawClick]:
    """Four clicks on a 300s video: play, long forward skip, speed-up, pause.

    The expected position walk at 15s intervals is
    (0, 1, 2, 3, 13, 14, 15, 15, 16, 17, 18, 19, 20).
    """
    return [
        click("play", 0.0, 0.0, "playing", 1.0),
        click("skip", 200.0, 50.0, "playing", 1.0),
        click("ratechange", 230.0, 80.0, "playing", 1.25),
        click("pause", 300.0, 127.0, "paused", 1.25),
    ]


REFERENCE_WALK = [0, 1, 2, 3, 13, 14, 15, 15, 16, 17, 18, 19, 20]


@pytest.fixture
def single_video_catalog() -> VideoCatalog:
    return VideoCatalog([VideoEntry("v1", 300.0, "q1", 0)])
