"""Command-line surface: compress, synth, needle, and report subcommands.

Exit codes: 0 success, 2 malformed input file, 3 invalid configuration,
4 budget infeasible (anchors alone exceed the context length).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import (
    BudgetInfeasibleError,
    CompressionError,
    EmptyVideoError,
    FileFormatError,
    InvalidConfigError,
)
from .formats import read_features, read_query, write_compressed, write_features
from .framepos import FramePositionConfig
from .pipeline import CompressionConfig, StageToggles, compress
from .spatial import AnchorStrategy
from .synthbench import (
    NeedleSpec,
    SynthSpec,
    anchor_ablation,
    gen_video,
    make_mixed_corpus,
    reduction_report,
    run_needle_grid,
)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_BAD_CONFIG = 3
EXIT_INFEASIBLE = 4

_ANCHOR_FLAGS = {"first": "first", "middle": "middle", "high-change": "high_change"}


def _parse_grid(text: str, flag: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise InvalidConfigError(f"{flag} expects HxW (e.g. 12x12), got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError:
        raise InvalidConfigError(f"{flag} expects integers HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise InvalidConfigError(f"{flag} dimensions must be positive, got {text!r}")
    return h, w


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise InvalidConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise InvalidConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _build_config(args, fpe_dim: int | None) -> CompressionConfig:
    if args.theta is not None and not (0.0 < args.theta < 1.0):
        raise InvalidConfigError(f"--theta must be in (0, 1), got {args.theta}")
    if args.tau_t is not None and not (0.0 < args.tau_t <= 1.0):
        raise InvalidConfigError(f"--tau-t must be in (0, 1], got {args.tau_t}")
    if args.anchor not in _ANCHOR_FLAGS:
        raise InvalidConfigError(
            f"--anchor must be one of first, middle, high-change; got {args.anchor!r}"
        )
    if args.fpe not in ("on", "off"):
        raise InvalidConfigError(f"--fpe must be 'on' or 'off', got {args.fpe!r}")
    disabled = set(args.disable_stage or [])
    unknown = disabled - {"temporal", "query", "stc"}
    if unknown:
        raise InvalidConfigError(
            f"--disable-stage accepts temporal, query, stc; got {sorted(unknown)}"
        )
    cfg = CompressionConfig(
        l_max=args.context_length,
        tokens_high=_parse_grid(args.tokens_high, "--tokens-high"),
        tokens_low=_parse_grid(args.tokens_low, "--tokens-low"),
        j=args.window_j,
        k=args.window_k,
        theta=args.theta,
        tau_t=args.tau_t,
        anchor=AnchorStrategy(_ANCHOR_FLAGS[args.anchor]),
        fpe=FramePositionConfig(enabled=args.fpe == "on", dim=fpe_dim),
        min_full_res_frames=args.min_full_res_frames,
        stages=StageToggles(
            temporal="temporal" not in disabled,
            query="query" not in disabled,
            stc="stc" not in disabled,
        ),
    )
    cfg.validate()
    return cfg


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--context-length", type=int, default=8192)
    p.add_argument("--tokens-high", default="12x12")
    p.add_argument("--tokens-low", default="8x8")
    p.add_argument("--window-j", type=int, default=8)
    p.add_argument("--window-k", type=int, default=8)
    p.add_argument("--theta", type=float, default=0.8)
    p.add_argument("--tau-t", type=float, default=0.85)
    p.add_argument("--anchor", default="first")
    p.add_argument("--fpe", default="off")
    p.add_argument("--min-full-res-frames", type=int, default=0)
    p.add_argument("--disable-stage", action="append", default=[], metavar="STAGE")


def cmd_compress(args) -> int:
    video = read_features(args.input)
    query = read_query(args.query)
    cfg = _build_config(args, fpe_dim=video.dim)
    compressed, stats = compress(video, query, cfg)
    write_compressed(args.output, compressed, stats)
    if args.stats:
        Path(args.stats).write_text(
            json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n"
        )
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_frames=args.frames,
        n_scenes=args.scenes,
        intra_scene_noise=args.noise,
        drift_scenes_fraction=args.drift_fraction,
        dim=args.dim,
        grid=_parse_grid(args.grid, "--grid"),
        seed=args.seed,
    )
    spec.validate()
    write_features(args.out, gen_video(spec))
    return EXIT_OK


def _write_csv(path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_needle(args) -> int:
    counts = _parse_ints(args.frame_counts, "--frame-counts")
    depths = _parse_floats(args.depths, "--depths")
    spec = NeedleSpec(
        haystack=SynthSpec(
            n_frames=max(counts),
            n_scenes=max(1, max(counts) // 64),
            dim=args.dim,
            grid=_parse_grid(args.grid, "--grid"),
            seed=args.seed,
        ),
        depths=depths,
        frame_counts=counts,
        query_alignment=args.alignment,
    )
    cfg = _build_config(args, fpe_dim=args.dim)
    cells = run_needle_grid(spec, cfg)

    report = Path(args.report)
    header = [
        "frame_count",
        "depth",
        "needle_full_res",
        "needle_tokens_kept_fraction",
        "any_token_survives",
    ]
    rows = [
        [
            c["frame_count"],
            c["depth"],
            c["needle_full_res"],
            repr(c["needle_tokens_kept_fraction"]),
            c["any_token_survives"],
        ]
        for c in cells
    ]
    _write_csv(report, header, rows)
    aggregate = {
        "cells": len(cells),
        "full_res_rate": sum(c["needle_full_res"] for c in cells) / len(cells),
        "any_token_survival_rate": sum(c["any_token_survives"] for c in cells) / len(cells),
        "mean_tokens_kept_fraction": sum(c["needle_tokens_kept_fraction"] for c in cells)
        / len(cells),
    }
    report.with_suffix(".json").write_text(
        json.dumps(aggregate, sort_keys=True, indent=2) + "\n"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    if args.corpus_size < 1:
        raise InvalidConfigError(f"--corpus-size must be positive, got {args.corpus_size}")
    corpus = make_mixed_corpus(args.corpus_size, args.seed)
    cfg = _build_config(args, fpe_dim=corpus[0].dim)
    per_video, aggregate = reduction_report(corpus, cfg)
    payload = dict(aggregate)
    if args.anchor_ablation:
        payload["anchor_ablation"] = anchor_ablation(corpus, cfg)
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    if args.csv:
        header = ["video", "frames_in", "frames_after_temporal", "temporal_keep_rate",
                  "spatial_reduction_rate", "tokens_final"]
        rows = [
            [i, s.frames_in, s.frames_after_temporal, repr(s.temporal_keep_rate),
             repr(s.spatial_reduction_rate), s.tokens_final]
            for i, s in enumerate(per_video)
        ]
        _write_csv(args.csv, header, rows)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtcompress",
        description="Compress long-video token sequences under a fixed context length.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a feature file against a query file")
    p.add_argument("--input", required=True, help="LVUF feature file")
    p.add_argument("--query", required=True, help="LVUQ query embedding file")
    p.add_argument("--output", required=True, help="LVUC output file")
    p.add_argument("--stats", default=None, help="optional JSON stats path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("synth", help="generate a synthetic LVUF feature file")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--drift-fraction", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--grid", default="12x12")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("needle", help="run the needle-retention grid")
    p.add_argument("--frame-counts", default="200,400,800,1400,2000,3600")
    p.add_argument("--depths", default="0,0.25,0.5,0.75,1")
    p.add_argument("--alignment", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--grid", default="12x12")
    p.add_argument("--report", required=True, help="CSV path; aggregate JSON lands beside it")
    _add_config_flags(p)
    p.set_defaults(func=cmd_needle)

    p = sub.add_parser("report", help="reduction-rate distributions on a synthetic corpus")
    p.add_argument("--corpus-size", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="aggregate JSON path")
    p.add_argument("--csv", default=None, help="optional per-video CSV path")
    p.add_argument("--anchor-ablation", action="store_true",
                   help="also compare the three anchor strategies")
    _add_config_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, EmptyVideoError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except BudgetInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InvalidConfigError, CompressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
