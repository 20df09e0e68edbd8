"""
Subcommand implementations.

Each handler takes the parsed arguments and configuration, does its work
through the core modules and returns an exit code. Every output file is
written atomically.
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Tuple

from ..charts.chart_renderer import history_series, render_loss_chart
from ..core.data_models import EmbeddingDataset, Labels
from ..core.datastore import (
    atomic_write_text,
    ingest_csv,
    read_embeddings,
    write_embeddings,
)
from ..core.errors import DataFormatError, TrainingAborted
from ..core.kernels import LossKind
from ..core.numkit import Matrix
from ..core.probe import aggregate_runs, probe_records, read_records_csv
from ..core.synthbench import run_fixture
from ..core.trainer import (
    load_checkpoint,
    save_checkpoint,
    student_embeddings,
    timing_report,
    train_distill,
    write_history_csv,
)
from .config_parser import CliConfig

logger = logging.getLogger(__name__)


def _sibling(path: str, suffix: str) -> Path:
    target = Path(path)
    return target.with_name(target.name + suffix)


def _load_dataset(base_path: str, teacher_paths: List[str]) -> EmbeddingDataset:
    base, labels = read_embeddings(base_path)
    views: List[Tuple[str, Matrix]] = []
    for path in teacher_paths:
        views.append((Path(path).stem, read_embeddings(path)[0]))
    return EmbeddingDataset(base, views, labels)


def run_train(args: argparse.Namespace, config: CliConfig) -> int:
    train_config = config.train_config(seed=args.seed)
    if args.loss:
        train_config = replace(
            train_config, loss=LossKind(args.loss, train_config.loss.cosine_eps)
        )
    data = _load_dataset(args.base, args.teachers)
    resume = load_checkpoint(args.resume) if args.resume else None

    # Periodic saves go to a sibling; <out> only ever holds a finished run.
    partial = _sibling(args.out, ".partial")
    try:
        checkpoint = train_distill(train_config, data, resume, checkpoint_path=partial)
    except TrainingAborted as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, _sibling(args.out, ".aborted"))
        raise

    save_checkpoint(checkpoint, args.out)
    partial.unlink(missing_ok=True)
    write_history_csv(checkpoint, _sibling(args.out, ".history.csv"))
    chart = render_loss_chart(
        history_series(
            checkpoint.train_history,
            checkpoint.val_history,
            checkpoint.entropy_history,
            checkpoint.teacher_names,
        ),
        f"{train_config.loss.name} distillation",
    )
    atomic_write_text(_sibling(args.out, ".loss.svg"), chart)
    print(
        f"Trained {checkpoint.epoch} epochs; final val loss "
        f"{checkpoint.val_history[-1]:.6f}"
    )
    return 0


def _resolve_labels(args: argparse.Namespace) -> Tuple[Labels, str]:
    source = args.labels or args.embeddings[0]
    _, labels = read_embeddings(source)
    if labels is None:
        raise DataFormatError(f"{source}: no label block")
    return labels, args.task or Path(source).stem


def run_eval_probe(args: argparse.Namespace, config: CliConfig) -> int:
    labels, task = _resolve_labels(args)
    probe_config = config.probe_config()
    logger.info(
        "Probing %d rows under %d seeds (split seed %d)",
        labels.values.shape[0],
        len(probe_config.seeds),
        args.seed,
    )

    records = []
    for path in args.embeddings:
        matrix, _ = read_embeddings(path)
        records.extend(
            probe_records(
                Path(path).stem,
                matrix,
                task,
                labels,
                probe_config,
                split_seed=args.seed,
            )
        )
    report = aggregate_runs(records)
    out_dir = Path(args.out)
    report.write_csv(out_dir / "metrics.csv")
    report.write_json(out_dir / "metrics.json")
    for metric in report.metrics:
        print(f"[{metric}]")
        print(report.format_table(metric))
    return 0


def run_synth(args: argparse.Namespace, config: CliConfig) -> int:
    fixture = config.fixture_spec(args.preset, args.seed)
    if args.include_teachers:
        fixture = replace(fixture, include_teachers=True)
    result = run_fixture(fixture)
    result.write(args.out)
    for metric in result.report.metrics:
        print(f"[{metric}]")
        print(result.report.format_table(metric))
    return 0


def run_ingest_csv(args: argparse.Namespace, config: CliConfig) -> int:
    label_column = args.label_column or config.get("datastore.label_column")
    matrix = ingest_csv(args.csv, args.out, label_column, args.label_kind)
    print(f"Wrote {matrix.shape[0]} x {matrix.shape[1]} matrix to {args.out}")
    return 0


def run_export_embeddings(args: argparse.Namespace, config: CliConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    base, labels = read_embeddings(args.base)
    embeddings = student_embeddings(checkpoint, base)
    write_embeddings(args.out, embeddings, labels)
    print(f"Wrote {embeddings.shape[0]} x {embeddings.shape[1]} embeddings")
    return 0


def run_timing(args: argparse.Namespace, config: CliConfig) -> int:
    train_config = config.train_config(seed=args.seed, default_epochs=1)
    if args.loss:
        train_config = replace(
            train_config, loss=LossKind(args.loss, train_config.loss.cosine_eps)
        )
    data = _load_dataset(args.base, args.teachers)
    counts = config.get("timing.teacher_counts") or range(1, len(args.teachers) + 1)
    report = timing_report(train_config, data, counts, steps=config.get("timing.steps"))
    print(report.format_table())
    print(f"logical cores: {report.logical_cores}")
    if args.out:
        atomic_write_text(args.out, report.to_csv_text())
    return 0


def run_report(args: argparse.Namespace, config: CliConfig) -> int:
    records = []
    for path in args.inputs:
        records.extend(read_records_csv(path))
    report = aggregate_runs(records)
    atomic_write_text(args.out, json.dumps(report.to_json_dict(), indent=2) + "\n")
    for metric in report.metrics:
        print(f"[{metric}]")
        print(report.format_table(metric))
    return 0


HANDLERS: Dict[str, Callable[[argparse.Namespace, CliConfig], int]] = {
    "train": run_train,
    "eval-probe": run_eval_probe,
    "synth": run_synth,
    "ingest-csv": run_ingest_csv,
    "export-embeddings": run_export_embeddings,
    "timing": run_timing,
    "report": run_report,
}
