"""
Command line argument parsing and validation.

One subcommand per pipeline stage: distill, probe, run the synthetic
benchmark, convert and export embeddings, time training steps and merge
reports.
"""

import argparse
from typing import List, Optional, Sequence

from ..core.kernels import LOSS_KINDS
from ..core.synthbench import PRESETS

COMMANDS = (
    "train",
    "eval-probe",
    "synth",
    "ingest-csv",
    "export-embeddings",
    "timing",
    "report",
)


def split_paths(text: str) -> List[str]:
    """Comma-separated path list; empty items are dropped."""
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", metavar="PATH", help="Flat key = value configuration file"
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one configuration key (repeatable)",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Enable debug logging"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gauss-distill",
        description="Multi-teacher embedding distillation with Gaussian kernels",
        epilog="Examples:\n"
        "  %(prog)s train --base x.emb --teachers a.emb,b.emb --seed 1 "
        "--out run.gdck --set train.epochs=20\n"
        "  %(prog)s synth --preset small --seed 7 --out results/\n"
        "  %(prog)s report --inputs a/metrics.csv,b/metrics.csv --out all.json",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    train = subparsers.add_parser("train", help="Distill a student from teachers")
    _add_common_arguments(train)
    train.add_argument("--base", required=True, help="EMB1 base features")
    train.add_argument(
        "--teachers", required=True, type=split_paths, help="Comma list of EMB1 files"
    )
    train.add_argument("--seed", type=int, help="Seed for all randomness (required)")
    train.add_argument("--out", required=True, help="Checkpoint path")
    train.add_argument("--loss", choices=LOSS_KINDS, help="Overrides loss.kind")
    train.add_argument("--resume", metavar="PATH", help="Continue from a checkpoint")

    probe = subparsers.add_parser("eval-probe", help="Probe frozen embeddings")
    _add_common_arguments(probe)
    probe.add_argument(
        "--embeddings",
        required=True,
        type=split_paths,
        help="Comma list of EMB1 files, one per embedder",
    )
    probe.add_argument(
        "--labels", help="EMB1 file whose label block defines the task"
    )
    probe.add_argument("--task", help="Task name (defaults to the labels file stem)")
    probe.add_argument("--seed", type=int, default=0, help="Split seed")
    probe.add_argument("--out", required=True, help="Output directory")

    synth = subparsers.add_parser("synth", help="Run the synthetic benchmark")
    _add_common_arguments(synth)
    synth.add_argument("--preset", choices=sorted(PRESETS), default="standard")
    synth.add_argument("--seed", type=int, help="Seed for all randomness (required)")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument(
        "--with-teachers",
        dest="include_teachers",
        action="store_true",
        help="Also probe the raw teacher views",
    )

    ingest = subparsers.add_parser("ingest-csv", help="Convert a CSV to EMB1")
    _add_common_arguments(ingest)
    ingest.add_argument("--csv", required=True, help="Header-first numeric CSV")
    ingest.add_argument("--out", required=True, help="EMB1 output path")
    ingest.add_argument("--label-column", help="Overrides datastore.label_column")
    ingest.add_argument(
        "--label-kind",
        choices=("classification", "regression"),
        default="regression",
    )

    export = subparsers.add_parser("export-embeddings", help="Embed with a student")
    _add_common_arguments(export)
    export.add_argument("--checkpoint", required=True, help="Checkpoint path")
    export.add_argument("--base", required=True, help="EMB1 base features")
    export.add_argument("--out", required=True, help="EMB1 output path")

    timing = subparsers.add_parser("timing", help="Per-teacher step overhead")
    _add_common_arguments(timing)
    timing.add_argument("--base", required=True, help="EMB1 base features")
    timing.add_argument(
        "--teachers", required=True, type=split_paths, help="Comma list of EMB1 files"
    )
    timing.add_argument("--seed", type=int, default=0)
    timing.add_argument("--loss", choices=LOSS_KINDS, help="Overrides loss.kind")
    timing.add_argument("--out", help="Optional CSV output path")

    report = subparsers.add_parser("report", help="Merge metric CSVs")
    _add_common_arguments(report)
    report.add_argument(
        "--inputs", required=True, type=split_paths, help="Comma list of metric CSVs"
    )
    report.add_argument("--out", required=True, help="Aggregate JSON path")
    return parser


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments and return validated values.

    Raises:
        SystemExit: If arguments are invalid or help is requested
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate_arguments(parser, args)
    return args


def _validate_seed_args(
    parser: argparse.ArgumentParser, args: argparse.Namespace
) -> None:
    """Commands that train from scratch need an explicit seed.

    Raises:
        SystemExit: If validation fails
    """
    if args.command in ("train", "synth") and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        parser.error("--seed must be non-negative")


def _validate_path_args(
    parser: argparse.ArgumentParser, args: argparse.Namespace
) -> None:
    """Path lists must not be empty.

    Raises:
        SystemExit: If validation fails
    """
    for name in ("teachers", "embeddings", "inputs"):
        if getattr(args, name, None) == []:
            parser.error(f"--{name} needs at least one path")


def _validate_arguments(
    parser: argparse.ArgumentParser, args: argparse.Namespace
) -> None:
    """Validate parsed arguments and show helpful error messages.

    Args:
        parser: The argument parser (for error reporting)
        args: Parsed arguments

    Raises:
        SystemExit: If validation fails
    """
    _validate_seed_args(parser, args)
    _validate_path_args(parser, args)
