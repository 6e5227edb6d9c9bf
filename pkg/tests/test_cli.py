from __future__ import annotations

import json
from pathlib import Path

import pytest

from clickmine.cli import main

SPEC = {
    "n_users": 60,
    "block_s": 30.0,
    "videos": [
        {"id": "v1", "length_s": 300.0, "quiz": "q1", "signal_block": 3, "fidelity": 0.95},
        {"id": "v2", "length_s": 240.0, "quiz": "q2", "cfa_rate": 0.6},
    ],
    "pause_rate": 0.5,
    "rate_change_rate": 0.2,
    "noise_rate": 0.02,
}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SPEC))
    out = root / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(out), "--seed", "17"]) == 0
    return out


def _encode(data_dir: Path, out: Path, *extra: str) -> int:
    return main(
        [
            "encode",
            "--clicks", str(data_dir / "clicks.ndjson"),
            "--submissions", str(data_dir / "submissions.ndjson"),
            "--catalog", str(data_dir / "catalog.json"),
            "--out", str(out),
            *extra,
        ]
    )


def test_synth_outputs_complete(data_dir):
    names = {p.name for p in data_dir.iterdir()}
    assert names == {"clicks.ndjson", "submissions.ndjson", "catalog.json", "ground_truth.json"}
    truth = json.loads((data_dir / "ground_truth.json").read_text())
    assert truth["n_users"] == 60


def test_synth_rerun_is_byte_identical(data_dir, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SPEC))
    again = tmp_path / "again"
    assert main(["synth", "--spec", str(spec), "--out", str(again), "--seed", "17"]) == 0
    for name in ("clicks.ndjson", "submissions.ndjson", "catalog.json", "ground_truth.json"):
        assert (again / name).read_bytes() == (data_dir / name).read_bytes()


def test_encode_outputs_and_idempotence(data_dir, tmp_path):
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert _encode(data_dir, out1, "--fasta") == 0
    assert _encode(data_dir, out2, "--fasta") == 0
    for name in ("sequences.ndjson", "positions.ndjson", "quartiles.json", "sequences.fasta"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    table = json.loads((out1 / "quartiles.json").read_text())
    assert set(table) == {"Pl", "Pa", "Sb", "Sf"}


def test_encode_reference_trajectory_positions(tmp_path):
    clicks = [
        {"u": "a", "v": "v1", "e": "play", "p": 0.0, "t": 0.0, "s": "playing", "r": 1.0},
        {"u": "a", "v": "v1", "e": "skip", "p": 200.0, "t": 50.0, "s": "playing", "r": 1.0},
        {"u": "a", "v": "v1", "e": "ratechange", "p": 230.0, "t": 80.0, "s": "playing", "r": 1.25},
        {"u": "a", "v": "v1", "e": "pause", "p": 300.0, "t": 127.0, "s": "paused", "r": 1.25},
    ]
    # Filler pairs so corpus quartiles are computable.
    for i in range(4):
        clicks.append({"u": f"f{i}", "v": "v1", "e": "play", "p": 0.0, "t": 0.0, "s": "playing", "r": 1.0})
        clicks.append({"u": f"f{i}", "v": "v1", "e": "skip", "p": 100.0 + i, "t": 30.0 + i, "s": "playing", "r": 1.0})
        clicks.append({"u": f"f{i}", "v": "v1", "e": "skip", "p": 50.0, "t": 40.0 + 2 * i, "s": "playing", "r": 1.0})
        clicks.append({"u": f"f{i}", "v": "v1", "e": "pause", "p": 60.0, "t": 60.0 + i, "s": "paused", "r": 1.0})
        clicks.append({"u": f"f{i}", "v": "v1", "e": "play", "p": 60.0, "t": 90.0 + i, "s": "playing", "r": 1.0})
        clicks.append({"u": f"f{i}", "v": "v1", "e": "pause", "p": 90.0, "t": 120.0 + i, "s": "paused", "r": 1.0})
    subs = [{"u": "a", "q": "q1", "cfa": 1}] + [
        {"u": f"f{i}", "q": "q1", "cfa": 0} for i in range(4)
    ]
    catalog = {"videos": [{"id": "v1", "length_s": 300.0, "quiz": "q1", "order": 0}]}
    (tmp_path / "c.ndjson").write_text("".join(json.dumps(c) + "\n" for c in clicks))
    (tmp_path / "s.ndjson").write_text("".join(json.dumps(s) + "\n" for s in subs))
    (tmp_path / "cat.json").write_text(json.dumps(catalog))
    out = tmp_path / "enc"
    code = main(
        [
            "encode",
            "--clicks", str(tmp_path / "c.ndjson"),
            "--submissions", str(tmp_path / "s.ndjson"),
            "--catalog", str(tmp_path / "cat.json"),
            "--out", str(out),
            "--width", "15",
        ]
    )
    assert code == 0
    rows = [
        json.loads(line)
        for line in (out / "positions.ndjson").read_text().splitlines()
    ]
    walk = next(r for r in rows if r["u"] == "a")
    assert [entry[0] for entry in walk["seq"]] == [0, 1, 2, 3, 13, 14, 15, 15, 16, 17, 18, 19, 20]


def test_motifs_command(tmp_path, data_dir):
    enc = tmp_path / "enc"
    assert _encode(data_dir, enc) == 0
    out = tmp_path / "motifs"
    code = main(
        [
            "motifs",
            "--sequences", str(enc / "sequences.ndjson"),
            "--out", str(out),
            "--seed", "3",
            "--widths", "4",
            "--replicates", "10",
            "--max-motifs", "1",
        ]
    )
    assert code == 0
    rows = json.loads((out / "motifs.json").read_text())
    for row in rows:
        assert set(row) == {
            "width", "pspm", "consensus", "e_value", "fs", "fs0", "fs1",
            "p_hat", "p_value", "group", "videos_any", "videos_10",
        }
    assert (out / "motifs_curated.json").exists()


def test_predict_command_outputs(tmp_path, data_dir):
    out = tmp_path / "rep"
    code = main(
        [
            "predict",
            "--clicks", str(data_dir / "clicks.ndjson"),
            "--submissions", str(data_dir / "submissions.ndjson"),
            "--catalog", str(data_dir / "catalog.json"),
            "--out", str(out),
            "--seed", "29",
            "--iterations", "2",
            "--min-class-samples", "15",
        ]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    keys = {
        "video", "algo", "acc_mean", "acc_sd", "f1_mean", "f1_sd",
        "w_mean", "w_sd", "b_mean", "b_sd",
    }
    assert all(set(r) == keys or r.get("excluded") for r in report)
    comparisons = json.loads((out / "comparisons.json").read_text())
    assert set(comparisons) == {"accuracy", "f1"}
    lines = (out / "improvement.csv").read_text().splitlines()
    assert lines[0] == "video,algo,acc_pct,f1_pct"
    assert (out / "metrics_box.png").exists()
    assert (out / "improvement_bars.png").exists()


def test_missing_input_fails_and_cleans_outputs(tmp_path):
    out = tmp_path / "nope"
    code = main(
        [
            "encode",
            "--clicks", str(tmp_path / "absent.ndjson"),
            "--submissions", str(tmp_path / "absent2.ndjson"),
            "--catalog", str(tmp_path / "absent3.json"),
            "--out", str(out),
        ]
    )
    assert code == 1
    assert not any(out.iterdir())


def test_seed_required_for_stochastic_commands(tmp_path):
    code = main(["motifs", "--sequences", "x", "--out", str(tmp_path / "o")])
    assert code == 2


def test_config_file_supplies_defaults(tmp_path, data_dir):
    config = tmp_path / "clickmine.conf"
    config.write_text(
        "\n".join(
            [
                "# pipeline settings",
                f"clicks = {data_dir / 'clicks.ndjson'}",
                f"submissions = {data_dir / 'submissions.ndjson'}",
                f"catalog = {data_dir / 'catalog.json'}",
                "width = 30",
            ]
        )
    )
    out = tmp_path / "from_config"
    code = main(["encode", "--config", str(config), "--out", str(out),
                 "--clicks", str(data_dir / "clicks.ndjson")])
    assert code == 0
    row = json.loads((out / "positions.ndjson").read_text().splitlines()[0])
    assert row["w"] == 30.0


def test_help_without_command(capsys):
    assert main([]) == 0
    assert "clickmine" in capsys.readouterr().out
