"""
Downstream probes on frozen embeddings and metric aggregation.

A probe is a small MLP trained on train-split-standardized embeddings. After
every epoch it is scored on the validation split; the best epoch (validation
loss breaks ties) supplies the reported test metric. Binary tasks report
AUROC of the positive-class probability, multi-class tasks accuracy and
regression tasks R².
"""

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import rankdata
from sklearn.metrics import accuracy_score, r2_score, roc_auc_score

from .data_models import Labels, SplitSpec
from .datastore import (
    DEFAULT_RATIOS,
    atomic_write_text,
    batch_indices,
    make_splits,
)
from .errors import (
    DataFormatError,
    DegenerateTaskError,
    IncompleteGridError,
    ShapeError,
    UndefinedMetricError,
    UsageError,
)
from .numkit import (
    AdamState,
    Matrix,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ProbeConfig:
    """Probe architecture and training schedule.

    Epochs follow min(max_epochs, epoch_budget / train size), never fewer
    than min_epochs.
    """

    hidden: int = 128
    depth: int = 2
    lr: float = 1e-3
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    batch_size: int = 64
    max_epochs: int = 100
    min_epochs: int = 10
    epoch_budget: float = 200 * 5000

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.depth < 1:
            raise UsageError("Probe width and depth must be at least 1")
        if not self.lr > 0:
            raise UsageError("Probe learning rate must be positive")
        if not self.seeds:
            raise UsageError("Probe needs at least one seed")
        if self.batch_size < 1 or self.min_epochs < 1 or self.max_epochs < 1:
            raise UsageError("Probe batch size and epoch limits must be positive")

    def epochs_for(self, task_size: int) -> int:
        budget = int(self.epoch_budget / max(task_size, 1))
        return max(self.min_epochs, min(self.max_epochs, budget))


@dataclass
class ProbeResult:
    """Best-validation probe and its test score."""

    metric_name: str
    test_metric: float
    val_metric: float
    best_epoch: int
    params: MlpParams
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    test_accuracy: Optional[float] = None
    target_mean: float = 0.0
    target_scale: float = 1.0


def accuracy(predicted: Sequence[int], true: Sequence[int]) -> float:
    """Fraction of matching class ids."""
    predicted_arr = np.asarray(predicted)
    true_arr = np.asarray(true)
    if predicted_arr.shape != true_arr.shape:
        raise ShapeError(f"{predicted_arr.shape} predictions, {true_arr.shape} labels")
    if predicted_arr.size == 0:
        raise UndefinedMetricError("Accuracy of an empty prediction set")
    return float(accuracy_score(true_arr, predicted_arr))


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive outscores random negative); ties count one half."""
    labels_arr = np.asarray(labels)
    scores_arr = np.asarray(scores, dtype=np.float64)
    if labels_arr.shape != scores_arr.shape:
        raise ShapeError(f"{scores_arr.shape} scores, {labels_arr.shape} labels")
    present = set(np.unique(labels_arr).tolist())
    if present != {0, 1}:
        raise UndefinedMetricError(
            f"AUROC needs both classes 0 and 1, got {sorted(present)}"
        )
    return float(roc_auc_score(labels_arr, scores_arr))


def r_squared(predictions: Sequence[float], targets: Sequence[float]) -> float:
    """1 - SS_res / SS_tot; negative when worse than the mean predictor."""
    predictions_arr = np.asarray(predictions, dtype=np.float64)
    targets_arr = np.asarray(targets, dtype=np.float64)
    if predictions_arr.shape != targets_arr.shape:
        raise ShapeError(
            f"{predictions_arr.shape} predictions, {targets_arr.shape} targets"
        )
    if targets_arr.size < 2:
        raise UndefinedMetricError("R² needs at least two samples")
    if np.all(targets_arr == targets_arr[0]):
        raise UndefinedMetricError("R² is undefined for constant targets")
    return float(r2_score(targets_arr, predictions_arr))


def primary_metric(labels: Labels) -> str:
    if labels.kind == "regression":
        return "r2"
    return "auroc" if labels.is_binary else "accuracy"


def _check_task(labels: Labels, splits: SplitSpec, metric: str) -> None:
    parts = {"train": splits.train, "val": splits.val, "test": splits.test}
    for name, indices in parts.items():
        if indices.size == 0:
            raise DegenerateTaskError(f"Empty {name} split")
        values = labels.values[indices]
        if labels.kind == "classification":
            needs_both = name == "train" or metric == "auroc"
            if needs_both and np.unique(values).size < 2:
                raise DegenerateTaskError(f"{name} split holds a single class")
        elif name != "train" and np.all(values == values[0]):
            raise DegenerateTaskError(f"{name} split has constant targets")


def _loss_and_grad(
    kind: str, outputs: Matrix, targets: np.ndarray
) -> Tuple[float, Matrix]:
    batch = outputs.shape[0]
    if kind == "classification":
        log_probs = log_softmax(outputs, axis=1)
        rows = np.arange(batch)
        loss = -float(log_probs[rows, targets].mean())
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return loss, grad / batch
    resid = outputs[:, 0] - targets
    return float(np.mean(resid**2)), (2.0 * resid / batch)[:, None]


def _score(
    metric: str, outputs: Matrix, targets: np.ndarray, target_scale: float
) -> float:
    if metric == "auroc":
        return auroc(softmax(outputs, axis=1)[:, 1], targets)
    if metric == "accuracy":
        return accuracy(np.argmax(outputs, axis=1), targets)
    return r_squared(outputs[:, 0] * target_scale, targets * target_scale)


def train_probe(
    embeddings: Matrix,
    labels: Labels,
    splits: SplitSpec,
    cfg: ProbeConfig,
    seed: int = 0,
) -> ProbeResult:
    """Train a probe on frozen embeddings and report its best-validation test score.

    Args:
        embeddings: Frozen embeddings, one row per sample (never modified)
        labels: Task labels aligned with the rows
        splits: Train/val/test indices
        cfg: Probe architecture and schedule
        seed: Seeds initialization and batch order

    Raises:
        DegenerateTaskError: If a split cannot support the task
    """
    features = np.asarray(embeddings, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != labels.values.shape[0]:
        raise ShapeError(
            f"{features.shape} embeddings for {labels.values.shape[0]} labels"
        )
    metric = primary_metric(labels)
    _check_task(labels, splits, metric)

    feature_mean = features[splits.train].mean(axis=0)
    feature_scale = features[splits.train].std(axis=0)
    feature_scale[feature_scale < 1e-12] = 1.0
    inputs = (features - feature_mean) / feature_scale

    target_mean, target_scale = 0.0, 1.0
    if labels.kind == "regression":
        target_mean = float(labels.values[splits.train].mean())
        target_scale = float(labels.values[splits.train].std()) or 1.0
        targets = (labels.values - target_mean) / target_scale
        out_dim = 1
    else:
        targets = labels.values
        out_dim = labels.n_classes

    rng = np.random.default_rng(seed)
    dims = [inputs.shape[1]] + [cfg.hidden] * (cfg.depth - 1) + [out_dim]
    params = init_mlp(dims, rng)
    adam = AdamState.for_params(params.arrays(), lr=cfg.lr)
    epochs = cfg.epochs_for(splits.train.size)

    best: Optional[Tuple[float, float, int, MlpParams]] = None
    val_inputs = inputs[splits.val]
    val_targets = targets[splits.val]
    for epoch in range(epochs):
        for batch in batch_indices(splits.train, cfg.batch_size, epoch, seed):
            outputs, tape = mlp_forward(params, inputs[batch])
            _, grad = _loss_and_grad(labels.kind, outputs, targets[batch])
            grads, _ = mlp_backward(params, tape, grad)
            adam_step(params.arrays(), grads.arrays(), adam)

        val_outputs = mlp_forward(params, val_inputs)[0]
        val_loss, _ = _loss_and_grad(labels.kind, val_outputs, val_targets)
        val_metric = _score(metric, val_outputs, val_targets, target_scale)
        logger.debug("probe epoch %d val %s %.4f", epoch + 1, metric, val_metric)
        if (
            best is None
            or val_metric > best[0]
            or (val_metric == best[0] and val_loss < best[1])
        ):
            best = (val_metric, val_loss, epoch, params.copy())

    assert best is not None
    val_metric, _, best_epoch, best_params = best
    test_outputs = mlp_forward(best_params, inputs[splits.test])[0]
    test_targets = targets[splits.test]
    test_accuracy = None
    if labels.kind == "classification":
        test_accuracy = accuracy(np.argmax(test_outputs, axis=1), test_targets)
    return ProbeResult(
        metric_name=metric,
        test_metric=_score(metric, test_outputs, test_targets, target_scale),
        val_metric=val_metric,
        best_epoch=best_epoch,
        params=best_params,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
        test_accuracy=test_accuracy,
        target_mean=target_mean,
        target_scale=target_scale,
    )


def probe_predict(result: ProbeResult, embeddings: Matrix) -> np.ndarray:
    """Class ids (argmax) or regression predictions in target units."""
    inputs = (np.asarray(embeddings, dtype=np.float64) - result.feature_mean)
    outputs = mlp_forward(result.params, inputs / result.feature_scale)[0]
    if result.metric_name == "r2":
        return outputs[:, 0] * result.target_scale + result.target_mean
    return np.argmax(outputs, axis=1)


@dataclass(frozen=True)
class RunRecord:
    """One probe score: embedder x task x seed x metric."""

    embedder: str
    task: str
    seed: int
    metric: str
    value: float


@dataclass(frozen=True)
class CellSummary:
    mean: float
    std: float
    n_seeds: int


@dataclass
class MetricsReport:
    """Per-seed records with mean ± std per cell and ranks per task.

    Cells are keyed by (embedder, task, metric). Rank 1 is best; ties share
    the mean of their ranks.
    """

    records: List[RunRecord]
    cells: Dict[Tuple[str, str, str], CellSummary] = field(default_factory=dict)
    ranks: Dict[Tuple[str, str], Dict[str, float]] = field(default_factory=dict)
    average_ranks: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def embedders(self) -> List[str]:
        return sorted({r.embedder for r in self.records})

    @property
    def tasks(self) -> List[str]:
        return sorted({r.task for r in self.records})

    @property
    def metrics(self) -> List[str]:
        return sorted({r.metric for r in self.records})

    def mean_over_tasks(self, embedder: str, metric: str) -> float:
        """Average of the per-task means of one embedder."""
        means = [
            cell.mean
            for (emb, _, met), cell in sorted(self.cells.items())
            if emb == embedder and met == metric
        ]
        if not means:
            raise DataFormatError(f"No {metric} results for {embedder}")
        return math.fsum(means) / len(means)

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["embedder", "task", "seed", "metric", "value"])
        for r in self.records:
            writer.writerow([r.embedder, r.task, r.seed, r.metric, repr(r.value)])
        return buffer.getvalue()

    def to_json_dict(self) -> Dict[str, object]:
        summary: Dict[str, object] = {}
        for metric in self.metrics:
            cells = [
                {
                    "embedder": emb,
                    "task": task,
                    "mean": cell.mean,
                    "std": cell.std,
                    "n_seeds": cell.n_seeds,
                }
                for (emb, task, met), cell in sorted(self.cells.items())
                if met == metric
            ]
            summary[metric] = {
                "cells": cells,
                "ranks": {
                    task: ranks
                    for (task, met), ranks in sorted(self.ranks.items())
                    if met == metric
                },
                "average_rank": self.average_ranks.get(metric, {}),
                "mean_over_tasks": {
                    emb: self.mean_over_tasks(emb, metric)
                    for emb in sorted({e for e, _, m in self.cells if m == metric})
                },
            }
        return {"metrics": summary}

    def write_csv(self, path: PathLike) -> None:
        atomic_write_text(path, self.to_csv_text())

    def write_json(self, path: PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict(), indent=2) + "\n")

    def format_table(self, metric: str) -> str:
        """Embedder rows with mean over tasks and average rank."""
        lines = [f"{'embedder':40s} {'mean':>8s} {'avg rank':>9s}"]
        for embedder in sorted(self.average_ranks.get(metric, {})):
            lines.append(
                f"{embedder:40s} {self.mean_over_tasks(embedder, metric):8.4f} "
                f"{self.average_ranks[metric][embedder]:9.3f}"
            )
        return "\n".join(lines)


def aggregate_runs(records: Iterable[RunRecord]) -> MetricsReport:
    """Mean ± std per cell, per-task ranks and average rank per embedder.

    The result does not depend on the order of ``records``.

    Raises:
        IncompleteGridError: If an (embedder, task, seed) cell is missing
            or duplicated
    """
    ordered = sorted(
        records, key=lambda r: (r.metric, r.embedder, r.task, r.seed, r.value)
    )
    if not ordered:
        raise IncompleteGridError("No results to aggregate")

    grouped: Dict[Tuple[str, str, str], Dict[int, float]] = defaultdict(dict)
    for r in ordered:
        key = (r.embedder, r.task, r.metric)
        if r.seed in grouped[key]:
            raise IncompleteGridError(f"Duplicate result for {key} seed {r.seed}")
        grouped[key][r.seed] = r.value

    report = MetricsReport(
        records=sorted(ordered, key=lambda r: (r.embedder, r.task, r.seed, r.metric))
    )
    for metric in sorted({r.metric for r in ordered}):
        embedders = sorted({r.embedder for r in ordered if r.metric == metric})
        tasks = sorted({r.task for r in ordered if r.metric == metric})
        seeds = sorted({r.seed for r in ordered if r.metric == metric})
        for embedder in embedders:
            for task in tasks:
                values = grouped.get((embedder, task, metric), {})
                missing = [s for s in seeds if s not in values]
                if missing:
                    raise IncompleteGridError(
                        f"Missing {metric} for {embedder} on {task}, seeds {missing}"
                    )
                series = [values[s] for s in seeds]
                std = float(np.std(series, ddof=1)) if len(series) > 1 else 0.0
                report.cells[(embedder, task, metric)] = CellSummary(
                    mean=math.fsum(series) / len(series), std=std, n_seeds=len(series)
                )

        task_ranks: Dict[str, List[float]] = defaultdict(list)
        for task in tasks:
            means = [report.cells[(emb, task, metric)].mean for emb in embedders]
            ranks = rankdata([-m for m in means], method="average")
            report.ranks[(task, metric)] = {
                emb: float(rank) for emb, rank in zip(embedders, ranks)
            }
            for emb, rank in zip(embedders, ranks):
                task_ranks[emb].append(float(rank))
        report.average_ranks[metric] = {
            emb: math.fsum(task_ranks[emb]) / len(task_ranks[emb]) for emb in embedders
        }
    return report


def read_records_csv(path: PathLike) -> List[RunRecord]:
    """Parse a long-form metrics CSV written by MetricsReport.write_csv."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        expected = ["embedder", "task", "seed", "metric", "value"]
        if reader.fieldnames != expected:
            raise DataFormatError(f"{path}: expected columns {expected}")
        try:
            return [
                RunRecord(
                    row["embedder"],
                    row["task"],
                    int(row["seed"]),
                    row["metric"],
                    float(row["value"]),
                )
                for row in reader
            ]
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc


def seed_splits(
    n: int, split_seed: int, seed: int, ratios: Sequence[float] = DEFAULT_RATIOS
) -> SplitSpec:
    """Split for one probe seed.

    Every embedder probed with the same split seed and probe seed sees the same
    partition, so per-seed scores stay paired across embedders.
    """
    derived = int(np.random.SeedSequence([split_seed, seed]).generate_state(1)[0])
    return make_splits(n, ratios, seed=derived)


def probe_records(
    embedder: str,
    embeddings: Matrix,
    task: str,
    labels: Labels,
    cfg: ProbeConfig,
    split_seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> List[RunRecord]:
    """Probe one task under every configured seed.

    Each seed draws its own train/validation/test partition through
    `seed_splits`. Classification tasks whose primary metric is AUROC also get
    an accuracy record per seed.
    """
    n = np.asarray(embeddings).shape[0]
    records = []
    for seed in cfg.seeds:
        splits = seed_splits(n, split_seed, seed, ratios)
        logger.debug("%s/%s seed %d: %s", embedder, task, seed, splits.format_sizes())
        result = train_probe(embeddings, labels, splits, cfg, seed)
        records.append(
            RunRecord(embedder, task, seed, result.metric_name, result.test_metric)
        )
        if result.test_accuracy is not None and result.metric_name != "accuracy":
            records.append(
                RunRecord(embedder, task, seed, "accuracy", result.test_accuracy)
            )
    return records
