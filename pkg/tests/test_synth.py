from __future__ import annotations

import numpy as np
import pytest

from clickmine.ingest import assemble_uv_pairs
from clickmine.synth import (
    SynthSpec,
    SynthVideo,
    clicks_ndjson,
    generate,
    submissions_ndjson,
    symbol_corpus,
)

SPEC = SynthSpec(
    n_users=80,
    videos=(
        SynthVideo("v1", 300.0, "q1", signal_block=3, fidelity=0.9),
        SynthVideo("v2", 240.0, "q2", cfa_rate=0.7),
    ),
    pause_rate=0.4,
    rate_change_rate=0.2,
    noise_rate=0.05,
    no_click_rate=0.05,
    motif_steps=(("play", 20.0), ("pause", 70.0), ("play", 20.0), ("pause", 70.0)),
    motif_rate_cfa=0.4,
    motif_rate_noncfa=0.1,
)


def test_generation_deterministic():
    a = generate(SPEC, seed=21)
    b = generate(SPEC, seed=21)
    assert clicks_ndjson(a.clicks) == clicks_ndjson(b.clicks)
    assert submissions_ndjson(a.submissions) == submissions_ndjson(b.submissions)
    assert a.ground_truth == b.ground_truth


def test_different_seeds_differ():
    a = generate(SPEC, seed=21)
    b = generate(SPEC, seed=22)
    assert clicks_ndjson(a.clicks) != clicks_ndjson(b.clicks)


def test_timestamps_strictly_ordered_per_pair():
    result = generate(SPEC, seed=3)
    by_pair: dict[tuple[str, str], list[float]] = {}
    for c in result.clicks:
        by_pair.setdefault((c.user_id, c.video_id), []).append(c.timestamp_s)
    for times in by_pair.values():
        assert all(b > a for a, b in zip(times, times[1:]))


def test_signal_label_fidelity():
    spec = SynthSpec(
        n_users=600,
        videos=(SynthVideo("v1", 300.0, "q1", signal_block=3, fidelity=0.9),),
        noise_rate=0.0,
        no_click_rate=0.0,
    )
    truth = generate(spec, seed=5).ground_truth
    match = [int(p["cfa"] == int(p["visited_signal"])) for p in truth["pairs"]]
    assert np.mean(match) == pytest.approx(0.9, abs=0.04)


def test_motif_insertions_recorded_and_valid():
    result = generate(SPEC, seed=9)
    by_pair = {}
    for c in result.clicks:
        by_pair.setdefault((c.user_id, c.video_id), []).append(c)
    planted = [p for p in result.ground_truth["pairs"] if p.get("motif_insertions")]
    assert planted, "expected at least one planted motif"
    for p in planted:
        clicks = by_pair[(p["u"], p["v"])]
        for offset in p["motif_insertions"]:
            assert 0 <= offset < len(clicks)
            # The planted template starts with a pause click.
            assert clicks[offset].event_type == "pause"


def test_pipeline_consumes_generated_files():
    result = generate(SPEC, seed=13)
    assembly = assemble_uv_pairs(result.clicks, result.submissions, result.catalog)
    truth = result.ground_truth["pairs"]
    empties = sum(1 for p in truth if p.get("empty"))
    labeled_with_clicks = sum(
        1 for p in assembly.labeled if len(p.clicks) > 0
    )
    assert assembly.dropped_noise_pairs > 0
    assert labeled_with_clicks + empties + assembly.dropped_noise_pairs == len(truth)
    # Empty-trajectory submissions survive as labeled pairs.
    assert sum(1 for p in assembly.labeled if not p.clicks) == empties


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_users=0, videos=(SynthVideo("v", 10.0, "q"),))
    with pytest.raises(ValueError):
        SynthVideo("v", -1.0, "q")
    with pytest.raises(ValueError):
        SynthSpec(
            n_users=1,
            videos=(SynthVideo("v", 10.0, "q"),),
            motif_steps=(("rewind", 3.0),),
        )


def test_spec_from_dict_round_trip_fields():
    doc = {
        "n_users": 5,
        "videos": [{"id": "v1", "length_s": 120.0, "quiz": "q1", "signal_block": 1}],
        "motif": {"steps": [["play", 10.0], ["pause", 30.0]], "rate_cfa": 0.5},
    }
    spec = SynthSpec.from_dict(doc)
    assert spec.n_users == 5
    assert spec.videos[0].signal_block == 1
    assert spec.motif_steps == (("play", 10.0), ("pause", 30.0))
    assert spec.motif_rate_cfa == 0.5


def test_symbol_corpus_plants_at_requested_rate():
    plant = ("Pl2", "Pa4", "Pl2", "Pa4")
    seqs = symbol_corpus(500, 14, seed=1, plant=plant, plant_rate=0.2)
    hits = sum(
        1
        for s in seqs
        if any(s.symbols[t : t + 4] == plant for t in range(len(s.symbols) - 3))
    )
    assert 60 <= hits <= 140  # 20% planted plus rare chance matches
    assert {len(s.symbols) for s in seqs} == {14}
