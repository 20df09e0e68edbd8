"""
Synthetic worlds with known latent structure and desk-scale experiments.

A world draws a standard-normal latent matrix, renders base features through
a fixed random MLP and derives tasks from linear functionals of latent
coordinate subsets. Teachers are frozen random views of their own latent
subsets, so tasks spanning several subsets need several teachers.
"""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import subspace_angles

from .data_models import EmbeddingDataset, Labels, SplitSpec
from .datastore import atomic_write_text, make_splits
from .errors import DegenerateTaskError, UsageError, WorldGenerationError
from .kernels import DisagreementBound, EntropyEstimate, LossKind
from .numkit import Matrix, init_mlp, mlp_forward
from .probe import (
    MetricsReport,
    ProbeConfig,
    RunRecord,
    aggregate_runs,
    probe_predict,
    probe_records,
    train_probe,
)
from .trainer import (
    TrainConfig,
    eval_loss,
    init_checkpoint,
    student_embeddings,
    train_distill,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_THRESHOLD_ATTEMPTS = 100
MIN_PREVALENCE = 0.1
VIEWS = ("mlp", "identity")


@dataclass
class TaskLabels:
    """One downstream task derived from a subset of latent coordinates."""

    name: str
    coords: Tuple[int, ...]
    labels: Labels
    threshold: Optional[float] = None

    @property
    def kind(self) -> str:
        return self.labels.kind


@dataclass
class SynthWorld:
    latent: Matrix
    base_features: Matrix
    tasks: List[TaskLabels]
    seed: int

    @property
    def n(self) -> int:
        return int(self.latent.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.latent.shape[1])


@dataclass(frozen=True)
class TeacherSpec:
    """A frozen view of a latent subset: view(latent[:, coords]) + noise."""

    name: str
    coords: Tuple[int, ...]
    dim: int = 16
    noise: float = 0.05
    seed: int = 0
    view: str = "mlp"
    hidden: int = 32

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if not self.coords:
            raise UsageError(f"Teacher {self.name} needs a non-empty latent subset")
        if self.view not in VIEWS:
            raise UsageError(f"Unknown view {self.view!r}; expected one of {VIEWS}")
        if self.view == "identity" and self.dim != len(self.coords):
            raise UsageError(
                f"Identity view of {len(self.coords)} coords cannot have dim {self.dim}"
            )
        if self.dim < 1 or self.hidden < 1 or self.noise < 0:
            raise UsageError(f"Teacher {self.name}: bad dim, width or noise")


def default_task_coords(
    latent_dim: int, n_tasks: int, n_spanning: int = 2, group_size: int = 3
) -> List[Tuple[int, ...]]:
    """Tasks cycle over latent groups; the last ``n_spanning`` join two groups."""
    n_groups = max(1, latent_dim // group_size)
    groups = [
        list(range(g * group_size, (g + 1) * group_size)) for g in range(n_groups)
    ]
    groups[-1].extend(range(n_groups * group_size, latent_dim))
    n_single = max(0, n_tasks - n_spanning)
    coords = [tuple(groups[i % n_groups]) for i in range(n_single)]
    for j in range(n_tasks - n_single):
        first = groups[j % n_groups]
        second = groups[(j + max(1, n_groups // 2)) % n_groups]
        coords.append(tuple(sorted(set(first) | set(second))))
    return coords


def _draw_threshold(rng: np.random.Generator, score: np.ndarray) -> float:
    return float(rng.normal(0.0, 0.5 * score.std()))


def _make_task(
    name: str,
    coords: Tuple[int, ...],
    latent: Matrix,
    rng: np.random.Generator,
    regression: bool,
) -> TaskLabels:
    weights = rng.standard_normal(len(coords))
    score = latent[:, list(coords)] @ weights
    if regression:
        values = (score - score.mean()) / score.std()
        return TaskLabels(name, coords, Labels("regression", values))
    for attempt in range(MAX_THRESHOLD_ATTEMPTS):
        threshold = _draw_threshold(rng, score)
        positives = score > threshold
        prevalence = float(positives.mean())
        if MIN_PREVALENCE <= prevalence <= 1.0 - MIN_PREVALENCE:
            if attempt:
                logger.warning("Task %s: threshold redrawn %d times", name, attempt)
            labels = Labels("classification", positives.astype(np.int64))
            return TaskLabels(name, coords, labels, threshold)
    raise WorldGenerationError(
        f"Task {name}: no threshold with prevalence in [{MIN_PREVALENCE}, "
        f"{1.0 - MIN_PREVALENCE}] after {MAX_THRESHOLD_ATTEMPTS} attempts"
    )


def generate_world(
    n: int,
    latent_dim: int,
    input_dim: int,
    n_tasks: int,
    seed: int,
    n_spanning: int = 2,
    group_size: int = 3,
    noise: float = 0.05,
    n_regression: int = 0,
    task_coords: Optional[Sequence[Sequence[int]]] = None,
) -> SynthWorld:
    """Seeded latent world with base features and tasks.

    Args:
        n: Number of samples (at least 100)
        latent_dim: Latent dimension L (at least 4)
        input_dim: Base feature dimension
        n_tasks: Number of tasks
        seed: Seeds every random draw
        n_spanning: Trailing tasks depending on two latent groups
        group_size: Latent coordinates per group
        noise: Observation noise added to base features
        n_regression: Trailing tasks that are regression instead of binary
        task_coords: Explicit latent subset per task

    Raises:
        WorldGenerationError: If a binary task cannot reach balanced prevalence
    """
    if n < 100 or latent_dim < 4:
        raise UsageError(f"World needs n >= 100 and L >= 4, got n={n} L={latent_dim}")
    if input_dim < 1 or n_tasks < 1 or group_size < 1:
        raise UsageError("input_dim, n_tasks and group_size must be positive")
    if task_coords is None:
        coords_list = default_task_coords(latent_dim, n_tasks, n_spanning, group_size)
    else:
        coords_list = [tuple(int(c) for c in coords) for coords in task_coords]
        if len(coords_list) != n_tasks:
            raise UsageError(f"{len(coords_list)} task subsets for {n_tasks} tasks")
    for coords in coords_list:
        if not coords or min(coords) < 0 or max(coords) >= latent_dim:
            raise UsageError(f"Task subset {list(coords)} outside [0, {latent_dim})")

    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, latent_dim))
    renderer = init_mlp([latent_dim, 2 * input_dim, input_dim], rng)
    base = mlp_forward(renderer, latent)[0] + noise * rng.standard_normal(
        (n, input_dim)
    )

    first_regression = n_tasks - n_regression
    tasks = [
        _make_task(f"task_{i}", coords, latent, rng, i >= first_regression)
        for i, coords in enumerate(coords_list)
    ]
    return SynthWorld(latent=latent, base_features=base, tasks=tasks, seed=seed)


def teacher_view(world: SynthWorld, spec: TeacherSpec) -> Matrix:
    if max(spec.coords) >= world.latent_dim or min(spec.coords) < 0:
        raise UsageError(
            f"Teacher {spec.name}: subset {list(spec.coords)} outside "
            f"[0, {world.latent_dim})"
        )
    source = world.latent[:, list(spec.coords)]
    if spec.view == "identity":
        view = source.copy()
    else:
        network = init_mlp(
            [len(spec.coords), spec.hidden, spec.dim],
            np.random.default_rng([spec.seed, 0]),
        )
        view = mlp_forward(network, source)[0]
    if spec.noise:
        noise_rng = np.random.default_rng([spec.seed, 1])
        view = view + spec.noise * noise_rng.standard_normal(view.shape)
    return view


def generate_teachers(
    world: SynthWorld, specs: Sequence[TeacherSpec]
) -> EmbeddingDataset:
    """Teacher embeddings aligned with the world's base features."""
    if not specs:
        raise UsageError("At least one teacher spec is required")
    views = [(spec.name, teacher_view(world, spec)) for spec in specs]
    return EmbeddingDataset(world.base_features, views)


def max_canonical_correlation(a: Matrix, b: Matrix) -> float:
    """Largest canonical correlation between the column spaces of two views."""
    centered_a = np.asarray(a, dtype=np.float64) - np.mean(a, axis=0)
    centered_b = np.asarray(b, dtype=np.float64) - np.mean(b, axis=0)
    angles = subspace_angles(centered_a, centered_b)
    return float(np.cos(np.min(angles)))


@dataclass
class FixtureSpec:
    """Everything needed to regenerate a comparison run."""

    seed: int = 0
    n: int = 4000
    latent_dim: int = 12
    input_dim: int = 32
    n_tasks: int = 8
    n_spanning: int = 2
    group_size: int = 3
    teacher_dim: int = 16
    noise: float = 0.05
    losses: Tuple[str, ...] = ("nll", "mse", "cosine")
    head_depths: Tuple[int, ...] = (3,)
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    student_hidden: Tuple[int, ...] = (128,)
    student_dim: int = 32
    head_hidden: int = 64
    probe_hidden: int = 128
    probe_depth: int = 2
    probe_lr: float = 1e-3
    probe_seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    probe_batch_size: int = 64
    probe_max_epochs: int = 30
    probe_min_epochs: int = 10
    include_teachers: bool = False

    def __post_init__(self) -> None:
        self.losses = tuple(self.losses)
        self.head_depths = tuple(int(d) for d in self.head_depths)
        self.student_hidden = tuple(int(h) for h in self.student_hidden)
        self.probe_seeds = tuple(int(s) for s in self.probe_seeds)
        for loss in self.losses:
            LossKind(loss)
        if not self.head_depths or min(self.head_depths) < 1:
            raise UsageError("head_depths must list positive depths")

    @property
    def n_teachers(self) -> int:
        return max(1, self.latent_dim // self.group_size)

    def teacher_specs(self) -> List[TeacherSpec]:
        groups = default_task_coords(
            self.latent_dim, self.n_teachers, n_spanning=0, group_size=self.group_size
        )
        return [
            TeacherSpec(
                name=f"teacher_{k}",
                coords=coords,
                dim=self.teacher_dim,
                noise=self.noise,
                seed=int(np.random.SeedSequence([self.seed, k]).generate_state(1)[0]),
            )
            for k, coords in enumerate(groups)
        ]

    def build(self) -> Tuple[SynthWorld, EmbeddingDataset]:
        world = generate_world(
            self.n,
            self.latent_dim,
            self.input_dim,
            self.n_tasks,
            self.seed,
            n_spanning=self.n_spanning,
            group_size=self.group_size,
            noise=self.noise,
        )
        return world, generate_teachers(world, self.teacher_specs())

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            student_hidden=self.student_hidden,
            student_dim=self.student_dim,
            head_depth=self.head_depths[0],
            head_hidden=self.head_hidden,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            hidden=self.probe_hidden,
            depth=self.probe_depth,
            lr=self.probe_lr,
            seeds=self.probe_seeds,
            batch_size=self.probe_batch_size,
            max_epochs=self.probe_max_epochs,
            min_epochs=self.probe_min_epochs,
        )

    def teacher_subsets(self) -> List[Tuple[str, ...]]:
        """Every single teacher, then all teachers together."""
        names = [spec.name for spec in self.teacher_specs()]
        subsets = [(name,) for name in names]
        if len(names) > 1:
            subsets.append(tuple(names))
        return subsets

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FixtureSpec":
        return cls(**json.loads(text))


def standard_fixture(seed: int = 0) -> FixtureSpec:
    """4000 samples, 12 latents, four 16-d teachers on disjoint triples, 8 tasks."""
    return FixtureSpec(seed=seed)


def small_fixture(seed: int = 0) -> FixtureSpec:
    """A few-second variant of the standard fixture."""
    return FixtureSpec(
        seed=seed,
        n=400,
        latent_dim=6,
        input_dim=12,
        n_tasks=3,
        n_spanning=1,
        teacher_dim=6,
        epochs=3,
        batch_size=64,
        student_hidden=(32,),
        student_dim=8,
        head_hidden=16,
        probe_hidden=16,
        probe_seeds=(0, 1),
        probe_batch_size=32,
        probe_max_epochs=5,
        probe_min_epochs=2,
    )


PRESETS = {"standard": standard_fixture, "small": small_fixture}


@dataclass(frozen=True)
class CellEntropy:
    """Held-out entropy estimates of one trained cell, before and after training."""

    embedder: str
    loss: str
    teachers: Tuple[str, ...]
    head_depth: int
    seed: int
    untrained: EntropyEstimate
    trained: EntropyEstimate
    bound: Optional[DisagreementBound]


@dataclass
class ComparisonResult:
    report: MetricsReport
    cells: List[CellEntropy] = field(default_factory=list)
    fixture: Optional[FixtureSpec] = None

    def entropy_csv_text(self) -> str:
        """One row per (cell, teacher) with h before and after training."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            [
                "embedder",
                "loss",
                "head_depth",
                "teacher",
                "h_untrained",
                "h_trained",
                "bound_raw",
                "bound_clamped",
            ]
        )
        for cell in self.cells:
            for k, name in enumerate(cell.teachers):
                bound_raw = bound_clamped = ""
                if cell.bound is not None:
                    bound_raw = repr(cell.bound.per_teacher_raw[k])
                    bound_clamped = repr(cell.bound.per_teacher_clamped[k])
                writer.writerow([
                    cell.embedder,
                    cell.loss,
                    cell.head_depth,
                    name,
                    repr(cell.untrained.per_teacher[k]),
                    repr(cell.trained.per_teacher[k]),
                    bound_raw,
                    bound_clamped,
                ])
        return buffer.getvalue()

    def write(self, out_dir: PathLike) -> Dict[str, Path]:
        """Write metrics CSV/JSON, entropy CSV and fixture JSON into out_dir."""
        directory = Path(out_dir)
        paths = {
            "metrics_csv": directory / "metrics.csv",
            "metrics_json": directory / "metrics.json",
            "entropy_csv": directory / "entropy.csv",
        }
        self.report.write_csv(paths["metrics_csv"])
        self.report.write_json(paths["metrics_json"])
        atomic_write_text(paths["entropy_csv"], self.entropy_csv_text())
        if self.fixture is not None:
            paths["fixture_json"] = directory / "fixture.json"
            atomic_write_text(paths["fixture_json"], self.fixture.to_json())
        for path in paths.values():
            logger.info("Wrote %s", path)
        return paths


def embedder_name(loss: str, teachers: Sequence[str], head_depth: int) -> str:
    return f"{loss}/{'+'.join(teachers)}/depth{head_depth}"


def run_comparison(
    world: SynthWorld,
    teachers: EmbeddingDataset,
    losses: Sequence[str],
    teacher_subsets: Sequence[Sequence[str]],
    train_config: TrainConfig,
    probe_config: ProbeConfig,
    head_depths: Optional[Sequence[int]] = None,
    include_teachers: bool = False,
) -> ComparisonResult:
    """Distill one student per (loss, teacher subset, head depth) cell and probe it.

    Heads only exist for NLL, so MSE and cosine cells use the first depth
    only. Cell i trains with seed ``train_config.seed ^ i``.

    Args:
        world: Source of base features and tasks
        teachers: Teacher embeddings aligned with the world
        losses: Objective names
        teacher_subsets: Teacher name tuples to distill from
        train_config: Base training config; loss, depth and seed vary per cell
        probe_config: Probe settings shared by every embedder
        head_depths: NLL head depths to sweep (defaults to the config's)
        include_teachers: Also probe each raw teacher view
    """
    if not teacher_subsets or any(not subset for subset in teacher_subsets):
        raise UsageError("Teacher subsets must be non-empty")
    depths = list(head_depths) if head_depths else [train_config.head_depth]
    splits = make_splits(world.n, seed=world.seed)

    cells = []
    for loss in losses:
        for subset in teacher_subsets:
            for depth in depths if loss == "nll" else depths[:1]:
                cells.append((loss, tuple(subset), depth))

    records: List[RunRecord] = []
    summaries = []
    for index, (loss, subset, depth) in enumerate(cells):
        name = embedder_name(loss, subset, depth)
        config = replace(
            train_config,
            seed=train_config.seed ^ index,
            loss=LossKind(loss, train_config.loss.cosine_eps),
            head_depth=depth,
        )
        data = teachers.select_teachers(list(subset))
        logger.info("Cell %d/%d: %s", index + 1, len(cells), name)
        untrained = eval_loss(init_checkpoint(config, data), data, splits.test)
        checkpoint = train_distill(config, data)
        trained = eval_loss(checkpoint, data, splits.test)
        summaries.append(
            CellEntropy(
                embedder=name,
                loss=loss,
                teachers=subset,
                head_depth=depth,
                seed=config.seed,
                untrained=untrained.estimate,
                trained=trained.estimate,
                bound=trained.bound,
            )
        )
        embeddings = student_embeddings(checkpoint, world.base_features)
        for task in world.tasks:
            records.extend(
                probe_records(
                    name,
                    embeddings,
                    task.name,
                    task.labels,
                    probe_config,
                    split_seed=world.seed,
                )
            )

    if include_teachers:
        for teacher_name, view in teachers.teacher_views:
            for task in world.tasks:
                records.extend(
                    probe_records(
                        f"teacher/{teacher_name}",
                        view,
                        task.name,
                        task.labels,
                        probe_config,
                        split_seed=world.seed,
                    )
                )
    return ComparisonResult(report=aggregate_runs(records), cells=summaries)


def run_fixture(fixture: FixtureSpec) -> ComparisonResult:
    """Regenerate the fixture and run its full comparison grid."""
    world, teachers = fixture.build()
    result = run_comparison(
        world,
        teachers,
        fixture.losses,
        fixture.teacher_subsets(),
        fixture.train_config(),
        fixture.probe_config(),
        head_depths=fixture.head_depths,
        include_teachers=fixture.include_teachers,
    )
    result.fixture = fixture
    return result


@dataclass(frozen=True)
class DisagreementReport:
    """Empirical probe disagreement per teacher next to the entropy bound.

    Probes stand in for the Bayes classifiers the bound refers to, so the
    rates are reported beside the bound, not checked against it.
    """

    teacher_names: Tuple[str, ...]
    rates: Tuple[float, ...]
    bound: Optional[DisagreementBound] = None

    @property
    def mean_rate(self) -> float:
        return math.fsum(self.rates) / len(self.rates)

    def format_lines(self) -> List[str]:
        lines = []
        for k, (name, rate) in enumerate(zip(self.teacher_names, self.rates)):
            line = f"{name}: empirical disagreement {rate:.4f}"
            if self.bound is not None:
                line += f", bound {self.bound.per_teacher_clamped[k]:.4f}"
            lines.append(line)
        lines.append(f"mean empirical disagreement {self.mean_rate:.4f}")
        return lines


def empirical_disagreement(
    student: Matrix,
    teacher_views: Sequence[Tuple[str, Matrix]],
    labels: Labels,
    splits: SplitSpec,
    probe_config: ProbeConfig,
    seed: int = 0,
    bound: Optional[DisagreementBound] = None,
) -> DisagreementReport:
    """Fraction of test rows where student and teacher probes predict differently.

    Raises:
        DegenerateTaskError: If the task is not discrete or a split is degenerate
    """
    if labels.kind != "classification":
        raise DegenerateTaskError("Disagreement needs a classification task")
    if not teacher_views:
        raise UsageError("Disagreement needs at least one teacher")
    test = splits.test
    student_probe = train_probe(student, labels, splits, probe_config, seed)
    student_pred = probe_predict(student_probe, np.asarray(student)[test])
    rates = []
    for _, view in teacher_views:
        teacher_probe = train_probe(view, labels, splits, probe_config, seed)
        teacher_pred = probe_predict(teacher_probe, np.asarray(view)[test])
        rates.append(float(np.mean(student_pred != teacher_pred)))
    return DisagreementReport(
        teacher_names=tuple(name for name, _ in teacher_views),
        rates=tuple(rates),
        bound=bound,
    )
