"""Command-line pipeline: encode, motifs, predict, synth.

Every command reads declared inputs, writes its outputs into --out, and is
idempotent: same inputs and seed give byte-identical files.  Stochastic
commands require an explicit --seed.  On failure, files created during the
run are removed and the exit code is non-zero.

A config file of flat ``key = value`` lines (keys matching the long option
names) can pre-set any option; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from clickmine import evaluation as ev
from clickmine import synth as synthmod
from clickmine.denoise import DenoiseConfig
from clickmine.events import (
    QuartileTable,
    compute_quartile_table,
    derive_events,
    encode_event_sequence,
    export_fasta,
    EventSequence,
)
from clickmine.denoise import combine_events, gap_mask
from clickmine.ingest import (
    VideoCatalog,
    assemble_uv_pairs,
    map_videos_to_quizzes,
    parse_clicks,
    parse_submissions,
)
from clickmine.motifs import (
    MotifConfig,
    discover_motifs,
    filter_motifs,
    support_and_significance,
)
from clickmine.positions import encode_positions

log = logging.getLogger("clickmine")


class CommandFailed(RuntimeError):
    pass


class OutputTracker:
    """Records files written by a command so failures leave nothing behind."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.created: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8")
        self.created.append(path)
        return path

    def register(self, path: Path) -> None:
        self.created.append(path)

    def cleanup(self) -> None:
        for path in self.created:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass


def _load_config(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CommandFailed(f"config line not of the form key = value: {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip().strip("\"'")
    return values


def _parse_widths(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in text.split(",") if part)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickmine",
        description="Clickstream encoding, motif discovery, and CFA prediction",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p: argparse.ArgumentParser, *, seed_required: bool) -> None:
        p.add_argument("--config", type=Path, help="flat key = value option file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument(
            "--seed",
            type=int,
            default=None,
            help="random seed" + (" (required)" if seed_required else ""),
        )
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(needs_seed=seed_required)

    def denoise_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--combine-window", type=float, default=5.0,
                       help="seconds under which repeated events merge")
        p.add_argument("--pause-gap", type=float, default=1200.0,
                       help="paused gap beyond which no state is inferred")
        p.add_argument("--play-gap", type=float, default=None,
                       help="playing gap threshold (default: video length)")

    p = sub.add_parser("encode", help="derive event and position sequences")
    common(p, seed_required=False)
    denoise_flags(p)
    p.add_argument("--clicks", type=Path)
    p.add_argument("--submissions", type=Path)
    p.add_argument("--catalog", type=Path)
    p.add_argument("--width", type=float, default=15.0,
                   help="interval width for positions.ndjson")
    p.add_argument("--quartiles", type=Path, default=None,
                   help="use this quartile table instead of computing one")
    p.add_argument("--include-unlabeled", action="store_true",
                   help="also encode pairs without a quiz submission")
    p.add_argument("--fasta", action="store_true", help="also write sequences.fasta")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("motifs", help="discover significant behavioral motifs")
    common(p, seed_required=True)
    p.add_argument("--sequences", type=Path,
                   help="sequences.ndjson from the encode step")
    p.add_argument("--widths", type=_parse_widths, default=tuple(range(4, 11)),
                   help="motif widths, e.g. 4..10 or 4,6,8")
    p.add_argument("--evalue", type=float, default=0.05)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--max-motifs", type=int, default=5, help="per width")
    p.add_argument("--site-mode", choices=("anr", "oops"), default="anr")
    p.add_argument("--fasta", action="store_true", help="also write sequences.fasta")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_motifs)

    p = sub.add_parser("predict", help="per-video CFA prediction evaluation")
    common(p, seed_required=True)
    denoise_flags(p)
    p.add_argument("--clicks", type=Path)
    p.add_argument("--submissions", type=Path)
    p.add_argument("--catalog", type=Path)
    p.add_argument("--algo", default="skr,dp,dt,ct",
                   help="comma list from skr,dp,dt,ct")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--min-class-samples", type=int, default=100)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("synth", help="generate synthetic clickstream data")
    common(p, seed_required=True)
    p.add_argument("--spec", type=Path,
                   help="JSON synthetic-data specification")
    p.set_defaults(handler=cmd_synth)

    return parser


def _denoise_config(args: argparse.Namespace) -> DenoiseConfig:
    return DenoiseConfig(
        combine_window_s=args.combine_window,
        pause_gap_s=args.pause_gap,
        play_gap_s=args.play_gap,
    )


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        value = getattr(args, name)
        if value is None:
            raise CommandFailed(f"--{name} is required (flag or config file)")
        path = Path(value)
        if not path.exists():
            raise CommandFailed(f"--{name} file {path} does not exist")
        setattr(args, name, path)


def _read_inputs(args: argparse.Namespace):
    _require(args, "clicks", "submissions", "catalog")
    clicks, click_errors = parse_clicks(args.clicks.read_text(encoding="utf-8").splitlines())
    subs, sub_errors = parse_submissions(
        args.submissions.read_text(encoding="utf-8").splitlines()
    )
    for err in click_errors[:20]:
        log.warning("clicks: %s", err)
    for err in sub_errors[:20]:
        log.warning("submissions: %s", err)
    if len(click_errors) > 20 or len(sub_errors) > 20:
        log.warning(
            "%d click / %d submission lines rejected in total",
            len(click_errors),
            len(sub_errors),
        )
    catalog = VideoCatalog.from_json(args.catalog.read_text(encoding="utf-8"))
    return clicks, subs, catalog


def cmd_encode(args: argparse.Namespace, tracker: OutputTracker) -> dict:
    clicks, subs, catalog = _read_inputs(args)
    assembly = assemble_uv_pairs(clicks, subs, catalog)
    logical = map_videos_to_quizzes(catalog)
    lengths = {video.quiz_id: video.length_s for video in logical.values()}
    cfg = _denoise_config(args)

    pairs = list(assembly.labeled)
    if args.include_unlabeled:
        pairs += list(assembly.unlabeled)

    if args.quartiles:
        table = QuartileTable.from_json(Path(args.quartiles).read_text(encoding="utf-8"))
    else:
        corpus_events = []
        for pair in pairs:
            combined = combine_events(pair.clicks, cfg)
            masked = gap_mask(combined, cfg, lengths[pair.video_id])
            corpus_events.extend(derive_events(combined, masked, lengths[pair.video_id]))
        table = compute_quartile_table(corpus_events)
    tracker.write_text("quartiles.json", table.to_json() + "\n")

    sequences = [
        encode_event_sequence(pair, table, lengths[pair.video_id], cfg)
        for pair in pairs
    ]
    tracker.write_text(
        "sequences.ndjson", "".join(s.to_json() + "\n" for s in sequences)
    )
    positions = [
        encode_positions(pair, args.width, lengths[pair.video_id], cfg)
        for pair in pairs
    ]
    tracker.write_text(
        "positions.ndjson", "".join(p.to_json() + "\n" for p in positions)
    )
    if args.fasta:
        tracker.write_text("sequences.fasta", export_fasta(sequences))
    return {
        "pairs": len(pairs),
        "dropped_noise_pairs": assembly.dropped_noise_pairs,
        "sequences": len(sequences),
    }


def cmd_motifs(args: argparse.Namespace, tracker: OutputTracker) -> dict:
    _require(args, "sequences")
    sequences = [
        EventSequence.from_json(line)
        for line in args.sequences.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    cfg = MotifConfig(
        widths=tuple(args.widths),
        e_threshold=args.evalue,
        replicates=args.replicates,
        max_motifs_per_width=args.max_motifs,
        site_mode=args.site_mode,
    )
    motifs = discover_motifs(sequences, cfg, seed=args.seed)
    reports = [support_and_significance(m, sequences) for m in motifs]

    def row(motif, report) -> dict:
        return {
            "width": motif.width,
            "pspm": motif.pspm.tolist(),
            "consensus": report.consensus,
            "e_value": motif.e_value,
            "fs": report.fs,
            "fs0": report.fs0,
            "fs1": report.fs1,
            "p_hat": report.p_hat,
            "p_value": report.p_value,
            "group": report.group,
            "videos_any": report.videos_any,
            "videos_10": report.videos_10,
        }

    rows = [row(m, r) for m, r in zip(motifs, reports)]
    tracker.write_text("motifs.json", json.dumps(rows, indent=2) + "\n")

    curated = filter_motifs(reports)
    curated_keys = {(r.width, r.consensus) for r in curated}
    curated_rows = [
        row(m, r) for m, r in zip(motifs, reports) if (r.width, r.consensus) in curated_keys
    ]
    tracker.write_text("motifs_curated.json", json.dumps(curated_rows, indent=2) + "\n")

    if args.fasta:
        tracker.write_text("sequences.fasta", export_fasta(sequences))
    if not args.no_figures and reports:
        from clickmine import plots

        tracker.register(plots.render_motif_video_support(reports, tracker.out_dir))
    return {"sequences": len(sequences), "motifs": len(motifs), "curated": len(curated)}


def cmd_predict(args: argparse.Namespace, tracker: OutputTracker) -> dict:
    algos = tuple(a.strip() for a in args.algo.split(",") if a.strip())
    unknown = [a for a in algos if a not in ev.ALGORITHMS]
    if unknown:
        raise CommandFailed(f"unknown algorithms: {unknown}")
    clicks, subs, catalog = _read_inputs(args)
    assembly = assemble_uv_pairs(clicks, subs, catalog)
    logical = map_videos_to_quizzes(catalog)
    cfg = ev.EvalConfig(
        iterations=args.iterations,
        folds=args.folds,
        alpha=args.alpha,
        min_class_samples=args.min_class_samples,
        seed=args.seed,
        denoise=_denoise_config(args),
    )

    by_video: dict[str, list] = {}
    for pair in assembly.labeled:
        by_video.setdefault(pair.video_id, []).append(pair)
    order = {video.quiz_id: video.order for video in logical.values()}
    tasks = [
        (video_id, order[video_id], members, logical[video_id].length_s)
        for video_id, members in sorted(by_video.items(), key=lambda kv: order[kv[0]])
    ]
    evaluations = ev.evaluate_videos(tasks, algos, cfg, jobs=args.jobs)
    summaries = [e.summary() for e in evaluations]
    tracker.write_text("report.json", json.dumps(summaries, indent=2) + "\n")

    comparisons: dict[str, dict[str, float | None]] = {"accuracy": {}, "f1": {}}
    included = [e for e in evaluations if not e.excluded]
    for metric, key in (("accuracy", "accuracy"), ("f1", "f1")):
        for i, a in enumerate(algos):
            for b in algos[i + 1 :]:
                xs = [e.mean_sd(key)[0] for e in included if e.algo == a]
                ys = [e.mean_sd(key)[0] for e in included if e.algo == b]
                name = f"{a}_vs_{b}"
                try:
                    comparisons[metric][name] = ev.compare_algorithms(xs, ys).p_value
                except ValueError as exc:
                    log.warning("comparison %s (%s) skipped: %s", name, metric, exc)
                    comparisons[metric][name] = None
    tracker.write_text("comparisons.json", json.dumps(comparisons, indent=2) + "\n")

    improvement = ev.improvement_report(evaluations)
    lines: list[list] = [["video", "algo", "acc_pct", "f1_pct"]]
    for r in improvement:
        lines.append(
            [
                r["video"],
                r["algo"],
                "NA" if r["acc_pct"] is None else f"{r['acc_pct']:.6f}",
                "NA" if r["f1_pct"] is None else f"{r['f1_pct']:.6f}",
            ]
        )
    out = tracker.out_dir / "improvement.csv"
    with out.open("w", newline="", encoding="utf-8") as handle:
        csv.writer(handle, lineterminator="\n").writerows(lines)
    tracker.register(out)

    if not args.no_figures:
        from clickmine import plots

        tracker.register(plots.render_metric_boxes(summaries, tracker.out_dir))
        if improvement:
            tracker.register(plots.render_improvement_bars(improvement, tracker.out_dir))
    return {
        "videos": len(tasks),
        "evaluated": sum(1 for e in evaluations if not e.excluded) // max(1, len(algos)),
        "algos": list(algos),
    }


def cmd_synth(args: argparse.Namespace, tracker: OutputTracker) -> dict:
    _require(args, "spec")
    spec = synthmod.SynthSpec.from_dict(json.loads(args.spec.read_text(encoding="utf-8")))
    result = synthmod.generate(spec, seed=args.seed)
    tracker.write_text("clicks.ndjson", synthmod.clicks_ndjson(result.clicks))
    tracker.write_text("submissions.ndjson", synthmod.submissions_ndjson(result.submissions))
    tracker.write_text("catalog.json", result.catalog_json() + "\n")
    tracker.write_text(
        "ground_truth.json", json.dumps(result.ground_truth, indent=2) + "\n"
    )
    return {
        "users": spec.n_users,
        "videos": len(spec.videos),
        "clicks": len(result.clicks),
    }


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # First pass only to find --config; its values become parser defaults so
    # explicit flags keep the last word.
    probe, _ = parser.parse_known_args(argv) if argv else (None, None)
    if probe is not None and getattr(probe, "config", None):
        try:
            config = _load_config(probe.config)
        except (OSError, CommandFailed) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for action in parser._subparsers._group_actions:  # noqa: SLF001
            for sub in action.choices.values():
                known = {a.dest for a in sub._actions}  # noqa: SLF001
                sub.set_defaults(
                    **{k: _coerce(v) for k, v in config.items() if k in known}
                )

    args = parser.parse_args(argv)
    if getattr(args, "handler", None) is None:
        parser.print_help()
        return 0
    if getattr(args, "needs_seed", False) and args.seed is None:
        print(f"error: {args.command} is stochastic; --seed is required", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    tracker = OutputTracker(args.out)
    try:
        summary = args.handler(args, tracker)
    except (CommandFailed, ValueError, OSError) as exc:
        log.error("%s", exc)
        tracker.cleanup()
        return 1
    print(json.dumps({"command": args.command, **summary}))
    return 0


def _coerce(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


if __name__ == "__main__":
    raise SystemExit(main())
