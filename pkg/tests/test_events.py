from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickmine.events import (
    EVENT_ALPHABET,
    FASTA_LETTERS,
    CanonicalEvent,
    EventSequence,
    QuartileTable,
    compute_quartile_table,
    compute_quartiles,
    derive_events,
    export_fasta,
    import_fasta,
    quantize,
    _bucket,
    _play_chunks,
)
from clickmine.ingest import UVPair

from conftest import click

# Quartile rows used throughout: one longer-form course, one shorter-form.
TABLE_A = {"Pl": (13.9, 67.5, 282.4), "Pa": (9.6, 31.9, 102.4),
           "Sb": (17.7, 35.4, 72.7), "Sf": (21.2, 63.7, 227.2)}
TABLE_B = {"Pl": (12.0, 71.0, 262.6), "Pa": (4.5, 19.3, 58.8),
           "Sb": (12.9, 26.2, 54.7), "Sf": (9.6, 28.4, 81.7)}


def table(rows) -> QuartileTable:
    return QuartileTable(rows)


# ------------------------------------------------------------ derivation


def test_five_event_schematic():
    """Play into a forward skip, play on, pause, then skip back while paused."""
    r = 1.25
    clicks = [
        click("play", 10.0, 100.0, "playing", r),
        click("skip", 80.0, 120.0, "playing", r),   # from 10 + 20*1.25 = 35
        click("pause", 110.0, 140.0, "paused", r),  # play 80 -> 110
        click("skip", 60.0, 170.0, "paused", r),    # backward while paused
    ]
    events = derive_events(clicks, set(), 300.0)
    kinds = [e.kind for e in events]
    assert kinds == ["Pl", "Sf", "Pl", "Pa", "Sb"]
    pl1, sf, pl2, pa, sb = events
    assert pl1.duration_s == 20.0 and pl1.length_s == pytest.approx(20.0 * r)
    assert sf.length_s == pytest.approx(80.0 - 35.0)
    assert pl2.duration_s == 20.0 and pl2.length_s == pytest.approx(30.0)
    assert pa.duration_s == 30.0
    assert sb.length_s == pytest.approx(110.0 - 60.0)


def test_skip_while_paused_uses_resting_position():
    clicks = [
        click("pause", 100.0, 10.0, "paused"),
        click("skip", 40.0, 20.0, "paused"),
    ]
    events = derive_events(clicks, set(), 300.0)
    assert [e.kind for e in events] == ["Pa", "Sb"]
    assert events[1].length_s == 60.0


def test_zero_length_skip_dropped():
    clicks = [
        click("pause", 100.0, 10.0, "paused"),
        click("skip", 100.0, 20.0, "paused"),
    ]
    events = derive_events(clicks, set(), 300.0)
    assert [e.kind for e in events] == ["Pa"]


def test_single_play_click_closes_at_video_end():
    clicks = [click("play", 60.0, 10.0, "playing", 1.5)]
    (event,) = derive_events(clicks, set(), 300.0)
    assert event.kind == "Pl"
    assert event.length_s == 240.0
    assert event.duration_s == pytest.approx(240.0 / 1.5)


def test_masked_pair_inserts_no_state_event():
    clicks = [click("play", 0.0, 0.0), click("pause", 60.0, 500.0, "paused")]
    assert [e.kind for e in derive_events(clicks, {0}, 300.0)] == []


def test_rate_events_split_by_direction():
    clicks = [
        click("ratechange", 10.0, 10.0, "playing", 1.5),
        click("ratechange", 20.0, 20.0, "playing", 0.75),
        click("ratechange", 30.0, 30.0, "playing", 1.0),
        click("pause", 40.0, 40.0, "paused", 1.0),
    ]
    kinds = [e.kind for e in derive_events(clicks, set(), 300.0)]
    assert kinds == ["Rf", "Pl", "Rs", "Pl", "Rd", "Pl"]


def test_play_pause_durations_tile_the_timeline():
    clicks = [
        click("play", 0.0, 0.0),
        click("pause", 50.0, 50.0, "paused"),
        click("play", 50.0, 80.0),
        click("skip", 200.0, 100.0),
        click("pause", 290.0, 190.0, "paused"),
    ]
    events = derive_events(clicks, set(), 300.0)
    span = clicks[-1].timestamp_s - clicks[0].timestamp_s
    total = sum(e.duration_s for e in events if e.kind in ("Pl", "Pa"))
    assert total == pytest.approx(span)


# ------------------------------------------------------------ quartiles


def test_quartiles_interpolation_and_count():
    events = [CanonicalEvent("Pa", duration_s=d) for d in (1.0, 2.0, 3.0, 4.0)]
    (q1, q2, q3), count = compute_quartiles(events, "Pa")
    assert (q1, q2, q3) == (1.75, 2.5, 3.25)
    assert count == 4


def test_quartiles_require_four_samples():
    events = [CanonicalEvent("Pa", duration_s=1.0)] * 3
    with pytest.raises(ValueError, match="external quartile table"):
        compute_quartiles(events, "Pa")


def test_skip_samples_below_tenth_second_excluded():
    lengths = [0.05, 0.09] + [1.0, 2.0, 3.0, 4.0]
    events = [CanonicalEvent("Sb", length_s=l) for l in lengths]
    (q1, q2, q3), count = compute_quartiles(events, "Sb")
    assert count == 4
    assert (q1, q2, q3) == (1.75, 2.5, 3.25)


def test_full_table_and_json_round_trip():
    events = [CanonicalEvent("Pl", duration_s=float(v), length_s=float(v)) for v in (1, 2, 3, 4)]
    events += [CanonicalEvent("Pa", duration_s=float(v)) for v in (1, 2, 3, 4)]
    for kind in ("Sb", "Sf"):
        events += [CanonicalEvent(kind, length_s=float(v)) for v in (1, 2, 3, 4)]
    t = compute_quartile_table(events)
    again = QuartileTable.from_json(t.to_json())
    assert again.rows == t.rows


# ------------------------------------------------------------ quantization


@pytest.mark.parametrize("rows", [TABLE_A, TABLE_B])
def test_medium_skip_maps_to_bucket_two(rows):
    (symbol,) = quantize([CanonicalEvent("Sb", length_s=20.0)], table(rows))
    assert symbol == "Sb2"


def test_long_play_chunks_greedily():
    symbols = quantize([CanonicalEvent("Pl", duration_s=550.0, length_s=550.0)], table(TABLE_B))
    assert symbols == ["Pl3", "Pl3", "Pl2"]


def test_pause_at_first_quartile_boundary_moves_up():
    (symbol,) = quantize([CanonicalEvent("Pa", duration_s=9.6)], table(TABLE_A))
    assert symbol == "Pa2"


def test_value_at_third_quartile_falls_in_top_bucket():
    assert _bucket(72.7, TABLE_A["Sb"]) == 4
    assert _bucket(72.69, TABLE_A["Sb"]) == 3


def test_rate_symbols_pass_through():
    events = [CanonicalEvent("Rf"), CanonicalEvent("Rs"), CanonicalEvent("Rd")]
    assert quantize(events, table(TABLE_A)) == ["Rf", "Rs", "Rd"]


@given(st.floats(0, 5000))
@settings(max_examples=100, deadline=None)
def test_play_chunking_terminates_and_conserves(duration):
    q = TABLE_B["Pl"]
    chunks = _play_chunks(duration, q)
    assert len(chunks) <= math.ceil(duration / q[2]) + 1
    assert all(c in (1, 2, 3) for c in chunks)
    # Every emitted 3-chunk except possibly the last accounts for Q3 of time.
    assert sum(q[c - 1] for c in chunks) >= duration or chunks[-1] == 3


@given(st.floats(0.1, 500), st.floats(0, 100))
@settings(max_examples=100, deadline=None)
def test_longer_skips_never_get_smaller_buckets(length, extra):
    q = TABLE_A["Sf"]
    assert _bucket(length + extra, q) >= _bucket(length, q)


def test_bucket_indices_stay_legal():
    t = table(TABLE_A)
    for value in (0.0, 9.6, 31.9, 102.4, 1e9):
        (symbol,) = quantize([CanonicalEvent("Pa", duration_s=value)], t)
        assert symbol in EVENT_ALPHABET
    for value in (0.1, 1e9):
        symbols = quantize([CanonicalEvent("Pl", duration_s=value, length_s=value)], t)
        assert all(s in ("Pl1", "Pl2", "Pl3") for s in symbols)


# ------------------------------------------------------------ alphabet / fasta


def test_alphabet_has_eighteen_symbols():
    assert len(EVENT_ALPHABET) == 18
    assert len(FASTA_LETTERS) == 18
    assert len(set(FASTA_LETTERS)) == 18


def test_fasta_letters_for_known_symbols():
    seq = EventSequence("u", "v", 1, ("Pl1", "Pa4", "Sb2"))
    text = export_fasta([seq])
    assert text == ">u|v|1\nAHK\n"


def test_fasta_round_trip_exact():
    seqs = [
        EventSequence("user one", "vid|1", 0, ("Pl2", "Rf", "Sf4")),
        EventSequence("u2", "v2", None, tuple(EVENT_ALPHABET)),
    ]
    again = import_fasta(export_fasta(seqs))
    assert [(s.user_id, s.video_id, s.cfa, s.symbols) for s in again] == [
        (s.user_id, s.video_id, s.cfa, s.symbols) for s in seqs
    ]


def test_empty_corpus_exports_empty_file():
    assert export_fasta([]) == ""


def test_sequence_json_round_trip():
    seq = EventSequence("u", "v", 0, ("Pl2", "Pa4"))
    assert EventSequence.from_json(seq.to_json()) == seq


def test_event_field_coupling_enforced():
    with pytest.raises(ValueError):
        CanonicalEvent("Pa", duration_s=1.0, length_s=2.0)
    with pytest.raises(ValueError):
        CanonicalEvent("Sb")
    with pytest.raises(ValueError):
        CanonicalEvent("Rf", duration_s=1.0)


def test_uv_pair_rejects_disorder():
    with pytest.raises(ValueError):
        UVPair("u", "v", [click("play", 0, 10), click("pause", 5, 5, "paused")])
