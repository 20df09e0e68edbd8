"""
End-to-end distillation: student and all teacher kernels trained jointly.

Each step samples a batch of precomputed embeddings, embeds the base features
with the student, evaluates the selected objective against every teacher and
applies one Adam update to the student and kernel parameters together.

Checkpoint file layout (little-endian)::

    offset  size  field
    0       4     magic "GDCK"
    4       4     u32 version (1)
    8       8     u64 header length H
    16      H     UTF-8 JSON header
    16+H    ...   float64 arrays, C order, in header["arrays"] order

The JSON header holds the training config and its hash, the completed epoch
count, loss histories, teacher names, the Adam step counter, the kernel
layout and the name and shape of every stored array. Arrays are stored at
64-bit so a save/load round-trip is bit-exact.
"""

import csv
import hashlib
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cpu_reader import CPUReader
from .data_models import EmbeddingDataset
from .datastore import (
    atomic_write_bytes,
    atomic_write_text,
    batch_indices,
    holdout_split,
)
from .errors import (
    BadMagicError,
    DataFormatError,
    NumericFailure,
    StaleCheckpointError,
    TrainingAborted,
    TruncatedPayloadError,
    UsageError,
)
from .kernels import (
    DisagreementBound,
    EntropyEstimate,
    GaussianHead,
    Kernel,
    LinearAdapter,
    LossKind,
    LossResult,
    disagreement_bound,
    distill_objective,
    init_kernels,
    kernel_arrays,
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

CHECKPOINT_MAGIC = b"GDCK"
CHECKPOINT_VERSION = 1
CHECKPOINT_PREFIX = struct.Struct("<4sIQ")

# Fields that do not change the trajectory of a run; resuming may alter them.
_UNHASHED_FIELDS = ("epochs", "checkpoint_every")


@dataclass
class TrainConfig:
    """Hyperparameters of one distillation run."""

    seed: int
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    loss: LossKind = field(default_factory=LossKind)
    input_dim: Optional[int] = None
    student_hidden: Tuple[int, ...] = (256, 128)
    student_dim: int = 64
    head_depth: int = 3
    head_hidden: int = 256
    var_floor: float = 1e-6
    val_fraction: float = 0.1
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        self.student_hidden = tuple(int(h) for h in self.student_hidden)
        self.lr = float(self.lr)
        self.var_floor = float(self.var_floor)
        self.val_fraction = float(self.val_fraction)
        if self.epochs < 1:
            raise UsageError("epochs must be at least 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be at least 1")
        if self.lr < 0:
            raise UsageError("learning rate must be non-negative")
        if self.student_dim < 1 or any(h < 1 for h in self.student_hidden):
            raise UsageError("student dims must be at least 1")
        if self.head_depth < 1 or self.head_hidden < 1:
            raise UsageError("head depth and width must be at least 1")
        if not self.var_floor > 0:
            raise UsageError("var_floor must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise UsageError("val_fraction must be in (0, 1)")
        if self.checkpoint_every < 0:
            raise UsageError("checkpoint_every must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["student_hidden"] = list(self.student_hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        values = dict(data)
        values["loss"] = LossKind(**values["loss"])
        values["student_hidden"] = tuple(values["student_hidden"])
        return cls(**values)

    def config_hash(self) -> str:
        """SHA-256 of every field that shapes the training trajectory."""
        data = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED_FIELDS}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    """Complete training state after ``epoch`` completed epochs."""

    config: TrainConfig
    student: MlpParams
    kernels: List[Kernel]
    adam: AdamState
    teacher_names: List[str]
    epoch: int = 0
    config_hash: str = ""
    train_history: List[float] = field(default_factory=list)
    val_history: List[float] = field(default_factory=list)
    entropy_history: List[Tuple[float, ...]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.config_hash:
            self.config_hash = self.config.config_hash()

    def parameters(self) -> List[np.ndarray]:
        """Student arrays followed by every kernel's arrays, in teacher order."""
        params = self.student.arrays()
        for kernel in self.kernels:
            params.extend(kernel_arrays(kernel))
        return params

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            config=self.config,
            student=self.student.copy(),
            kernels=[None if k is None else k.copy() for k in self.kernels],
            adam=self.adam.copy(),
            teacher_names=list(self.teacher_names),
            epoch=self.epoch,
            config_hash=self.config_hash,
            train_history=list(self.train_history),
            val_history=list(self.val_history),
            entropy_history=list(self.entropy_history),
        )


@dataclass(frozen=True)
class EvalResult:
    """Held-out objective value, per-teacher terms and disagreement bounds.

    ``mean_loss`` is the un-normalized total divided by K * rows, comparable
    across losses and batch sizes. ``bound`` is only set for NLL runs.
    """

    loss: float
    mean_loss: float
    estimate: EntropyEstimate
    bound: Optional[DisagreementBound]


def init_checkpoint(config: TrainConfig, data: EmbeddingDataset) -> Checkpoint:
    """Seeded random student and kernels with fresh Adam state.

    Raises:
        UsageError: If the dataset has no teacher or dims disagree with config
    """
    if not data.teacher_views:
        raise UsageError("Distillation needs at least one teacher")
    if config.input_dim is not None and config.input_dim != data.input_dim:
        raise UsageError(
            f"Config input_dim {config.input_dim} != "
            f"base feature dim {data.input_dim}"
        )
    rng = np.random.default_rng(config.seed)
    dims = [data.input_dim, *config.student_hidden, config.student_dim]
    student = init_mlp(dims, rng)
    kernels = init_kernels(
        config.loss,
        config.student_dim,
        data.teacher_dims,
        config.head_depth,
        config.head_hidden,
        rng,
        config.var_floor,
    )
    checkpoint = Checkpoint(
        config=config,
        student=student,
        kernels=kernels,
        adam=AdamState([], [], lr=config.lr),
        teacher_names=data.teacher_names,
    )
    checkpoint.adam = AdamState.for_params(checkpoint.parameters(), lr=config.lr)
    return checkpoint


def train_step(
    checkpoint: Checkpoint, x: Matrix, teachers: Sequence[Matrix]
) -> LossResult:
    """One forward/backward pass and a joint Adam update of all parameters."""
    s, tape = mlp_forward(checkpoint.student, x)
    result = distill_objective(checkpoint.config.loss, checkpoint.kernels, s, teachers)
    student_grads, _ = mlp_backward(checkpoint.student, tape, result.grad_s)
    grads = student_grads.arrays()
    for kernel_grads in result.kernel_grads:
        grads.extend(kernel_grads)
    adam_step(checkpoint.parameters(), grads, checkpoint.adam)
    return result


def _check_resume(
    checkpoint: Checkpoint, config: TrainConfig, data: EmbeddingDataset
) -> None:
    if checkpoint.config_hash != config.config_hash():
        raise StaleCheckpointError(
            "Checkpoint was produced by a different training config"
        )
    if checkpoint.teacher_names != data.teacher_names:
        raise StaleCheckpointError(
            f"Checkpoint teachers {checkpoint.teacher_names} != {data.teacher_names}"
        )


def train_distill(
    config: TrainConfig,
    data: EmbeddingDataset,
    resume: Optional[Checkpoint] = None,
    checkpoint_path: Optional[PathLike] = None,
) -> Checkpoint:
    """Run distillation until ``config.epochs`` epochs are complete.

    Args:
        config: Training hyperparameters
        data: Base features and teacher embeddings
        resume: Continue from this checkpoint instead of a fresh init
        checkpoint_path: Where to save every ``config.checkpoint_every`` epochs

    Raises:
        TrainingAborted: On a non-finite loss; carries the last finite checkpoint
    """
    if resume is not None:
        _check_resume(resume, config, data)
        checkpoint = resume.copy()
        checkpoint.config = config
    else:
        checkpoint = init_checkpoint(config, data)

    split = holdout_split(data.n, config.val_fraction, config.seed)
    teachers = data.teachers()
    n_teachers = len(teachers)
    last_good = checkpoint.copy()

    for epoch in range(checkpoint.epoch, config.epochs):
        totals = []
        batches = batch_indices(split.train, config.batch_size, epoch, config.seed)
        for batch in batches:
            try:
                result = train_step(
                    checkpoint,
                    data.base_features[batch],
                    [teacher[batch] for teacher in teachers],
                )
            except NumericFailure as exc:
                raise TrainingAborted(
                    f"Epoch {epoch + 1}: {exc}", last_good
                ) from exc
            totals.append(result.total)
            logger.debug("epoch %d batch loss %.6f", epoch + 1, result.value)

        train_loss = math.fsum(totals) / (n_teachers * split.train.size)
        try:
            val = eval_loss(checkpoint, data, split.val)
        except NumericFailure as exc:
            raise TrainingAborted(f"Epoch {epoch + 1}: {exc}", last_good) from exc
        if not math.isfinite(train_loss):
            raise TrainingAborted(
                f"Epoch {epoch + 1}: non-finite train loss", last_good
            )

        checkpoint.train_history.append(train_loss)
        checkpoint.val_history.append(val.mean_loss)
        checkpoint.entropy_history.append(val.estimate.per_teacher)
        checkpoint.epoch = epoch + 1
        logger.info(
            "epoch %d/%d train %.6f val %.6f",
            checkpoint.epoch,
            config.epochs,
            train_loss,
            val.mean_loss,
        )
        last_good = checkpoint.copy()

        if (
            checkpoint_path is not None
            and config.checkpoint_every
            and checkpoint.epoch % config.checkpoint_every == 0
        ):
            save_checkpoint(checkpoint, checkpoint_path)
    return checkpoint


def student_embeddings(checkpoint: Checkpoint, base_features: Matrix) -> Matrix:
    """Frozen student embedding S(X) of every row."""
    return mlp_forward(checkpoint.student, base_features)[0]


def eval_loss(
    checkpoint: Checkpoint, data: EmbeddingDataset, indices: Sequence[int]
) -> EvalResult:
    """Objective and per-teacher estimates on the given rows; no mutation."""
    rows = np.asarray(indices, dtype=np.int64)
    s = student_embeddings(checkpoint, data.base_features[rows])
    teachers = [teacher[rows] for teacher in data.teachers()]
    result = distill_objective(checkpoint.config.loss, checkpoint.kernels, s, teachers)
    bound = None
    if checkpoint.config.loss.name == "nll":
        bound = disagreement_bound(result.per_teacher)
    return EvalResult(
        loss=result.value,
        mean_loss=result.total / (len(teachers) * rows.size),
        estimate=result.per_teacher,
        bound=bound,
    )


def _kernel_layout(kernel: Kernel) -> Dict[str, Any]:
    if isinstance(kernel, GaussianHead):
        return {
            "type": "gaussian",
            "teacher_index": kernel.teacher_index,
            "layers": kernel.mlp.n_layers,
            "activation": kernel.mlp.activation,
            "var_floor": kernel.var_floor,
        }
    if isinstance(kernel, LinearAdapter):
        return {"type": "adapter", "teacher_index": kernel.teacher_index}
    return {"type": "none"}


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    params = checkpoint.parameters()
    arrays = params + checkpoint.adam.first_moment + checkpoint.adam.second_moment
    names = [f"param.{i}" for i in range(len(params))]
    names += [f"adam.m.{i}" for i in range(len(params))]
    names += [f"adam.v.{i}" for i in range(len(params))]
    header = {
        "config": checkpoint.config.to_dict(),
        "config_hash": checkpoint.config_hash,
        "epoch": checkpoint.epoch,
        "teacher_names": checkpoint.teacher_names,
        "train_history": checkpoint.train_history,
        "val_history": checkpoint.val_history,
        "entropy_history": [list(h) for h in checkpoint.entropy_history],
        "student": {
            "layers": checkpoint.student.n_layers,
            "activation": checkpoint.student.activation,
        },
        "kernels": [_kernel_layout(k) for k in checkpoint.kernels],
        "adam": {
            "t": checkpoint.adam.t,
            "lr": checkpoint.adam.lr,
            "beta1": checkpoint.adam.beta1,
            "beta2": checkpoint.adam.beta2,
            "eps": checkpoint.adam.eps,
        },
        "arrays": [
            {"name": name, "shape": list(array.shape)}
            for name, array in zip(names, arrays)
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [
        CHECKPOINT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)),
        header_bytes,
    ]
    parts.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return b"".join(parts)


def _read_arrays(
    blob: bytes, offset: int, manifest: List[Dict[str, Any]], source: str
) -> List[np.ndarray]:
    arrays = []
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        if len(blob) - offset < size:
            raise TruncatedPayloadError(source, size, len(blob) - offset)
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays.append(values.astype(np.float64).reshape(shape))
        offset += size
    return arrays


def _payload_size(manifest: List[Dict[str, Any]]) -> int:
    return sum(8 * int(np.prod(entry["shape"])) for entry in manifest)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    """Rebuild a checkpoint from its encoded bytes.

    Raises:
        BadMagicError: If the blob is not a checkpoint
        StaleCheckpointError: On version or config hash mismatch
        TruncatedPayloadError: If the blob is shorter than its header promises
        DataFormatError: On a corrupt header or trailing bytes
    """
    if len(blob) < CHECKPOINT_PREFIX.size:
        raise TruncatedPayloadError(source, CHECKPOINT_PREFIX.size, len(blob))
    magic, version, header_size = CHECKPOINT_PREFIX.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(
            f"{source}: bad magic {magic.decode('latin-1')!r}, expected 'GDCK'"
        )
    if version != CHECKPOINT_VERSION:
        raise StaleCheckpointError(
            f"{source}: unsupported checkpoint version {version}"
        )
    start = CHECKPOINT_PREFIX.size
    if len(blob) - start < header_size:
        raise TruncatedPayloadError(source, start + header_size, len(blob))
    try:
        header = json.loads(blob[start : start + header_size].decode("utf-8"))
        config = TrainConfig.from_dict(header["config"])
        stored_hash = str(header["config_hash"])
        expected = start + header_size + _payload_size(header["arrays"])
    except (ValueError, KeyError, TypeError, UsageError) as exc:
        raise DataFormatError(f"{source}: corrupt checkpoint header ({exc})") from exc
    if stored_hash != config.config_hash():
        raise StaleCheckpointError(f"{source}: config hash does not match its config")
    if len(blob) < expected:
        raise TruncatedPayloadError(source, expected, len(blob))
    if len(blob) > expected:
        raise DataFormatError(
            f"{source}: {len(blob) - expected} trailing bytes after the payload"
        )

    arrays = _read_arrays(blob, start + header_size, header["arrays"], source)
    try:
        return _assemble_checkpoint(header, config, arrays)
    except (ValueError, KeyError, TypeError, IndexError, UsageError) as exc:
        raise DataFormatError(f"{source}: corrupt checkpoint layout ({exc})") from exc


def _assemble_checkpoint(
    header: Dict[str, Any], config: TrainConfig, arrays: List[np.ndarray]
) -> Checkpoint:
    n_params = len(arrays) // 3
    params = arrays[:n_params]
    cursor = 2 * header["student"]["layers"]
    student = MlpParams(
        weights=params[0:cursor:2],
        biases=params[1:cursor:2],
        activation=header["student"]["activation"],
    )
    kernels: List[Kernel] = []
    for layout in header["kernels"]:
        if layout["type"] == "gaussian":
            width = 2 * layout["layers"]
            chunk = params[cursor : cursor + width]
            mlp = MlpParams(chunk[0::2], chunk[1::2], layout["activation"])
            kernels.append(
                GaussianHead(layout["teacher_index"], mlp, layout["var_floor"])
            )
            cursor += width
        elif layout["type"] == "adapter":
            kernels.append(LinearAdapter(layout["teacher_index"], params[cursor]))
            cursor += 1
        else:
            kernels.append(None)

    adam_meta = header["adam"]
    adam = AdamState(
        first_moment=arrays[n_params : 2 * n_params],
        second_moment=arrays[2 * n_params :],
        t=adam_meta["t"],
        lr=adam_meta["lr"],
        beta1=adam_meta["beta1"],
        beta2=adam_meta["beta2"],
        eps=adam_meta["eps"],
    )
    return Checkpoint(
        config=config,
        student=student,
        kernels=kernels,
        adam=adam,
        teacher_names=list(header["teacher_names"]),
        epoch=header["epoch"],
        config_hash=header["config_hash"],
        train_history=list(header["train_history"]),
        val_history=list(header["val_history"]),
        entropy_history=[tuple(h) for h in header["entropy_history"]],
    )


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> None:
    atomic_write_bytes(path, encode_checkpoint(checkpoint))
    logger.info("Saved checkpoint at epoch %d to %s", checkpoint.epoch, path)


def load_checkpoint(
    path: PathLike, expected_config: Optional[TrainConfig] = None
) -> Checkpoint:
    """Load a checkpoint, optionally requiring it to match ``expected_config``.

    Raises:
        StaleCheckpointError: On version or config hash mismatch
    """
    checkpoint = decode_checkpoint(Path(path).read_bytes(), str(path))
    if expected_config is not None and (
        checkpoint.config_hash != expected_config.config_hash()
    ):
        raise StaleCheckpointError(f"{path}: checkpoint belongs to another config")
    return checkpoint


def checkpoint_roundtrip(checkpoint: Checkpoint, path: PathLike) -> Checkpoint:
    """Save then load; the result equals the input bit for bit."""
    save_checkpoint(checkpoint, path)
    return load_checkpoint(path, checkpoint.config)


def history_csv_text(checkpoint: Checkpoint) -> str:
    """Loss history as CSV: epoch, train_loss, val_loss, h_1..h_K."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    n_teachers = len(checkpoint.teacher_names)
    writer.writerow(
        ["epoch", "train_loss", "val_loss"]
        + [f"h_{k + 1}" for k in range(n_teachers)]
    )
    for epoch, (train, val, entropy) in enumerate(
        zip(
            checkpoint.train_history,
            checkpoint.val_history,
            checkpoint.entropy_history,
        ),
        start=1,
    ):
        writer.writerow([epoch, repr(train), repr(val)] + [repr(h) for h in entropy])
    return buffer.getvalue()


def write_history_csv(checkpoint: Checkpoint, path: PathLike) -> None:
    atomic_write_text(path, history_csv_text(checkpoint))


@dataclass(frozen=True)
class TimingRow:
    teachers: int
    step_seconds: float
    cpu_seconds: float


@dataclass(frozen=True)
class TimingReport:
    """Mean step time per teacher count with a linear fit over K."""

    rows: Tuple[TimingRow, ...]
    slope: float
    intercept: float
    residual: float
    steps: int
    logical_cores: int

    @property
    def overhead_fraction(self) -> float:
        """Per-teacher overhead as a fraction of the teacher-free step time."""
        return self.slope / self.intercept if self.intercept > 0 else math.inf

    def format_table(self) -> str:
        lines = ["teachers  step_ms  cpu_ms"]
        for row in self.rows:
            lines.append(
                f"{row.teachers:8d}  {row.step_seconds * 1e3:7.3f}  "
                f"{row.cpu_seconds * 1e3:6.3f}"
            )
        lines.append(
            f"slope {self.slope * 1e3:.4f} ms/teacher, intercept "
            f"{self.intercept * 1e3:.4f} ms, residual {self.residual * 1e3:.4f} ms"
        )
        lines.append(f"per-teacher overhead fraction {self.overhead_fraction:.4f}")
        return "\n".join(lines)

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["teachers", "step_seconds", "cpu_seconds"])
        for row in self.rows:
            writer.writerow(
                [row.teachers, repr(row.step_seconds), repr(row.cpu_seconds)]
            )
        return buffer.getvalue()


def timing_report(
    config: TrainConfig,
    data: EmbeddingDataset,
    teacher_counts: Sequence[int],
    steps: int = 100,
    clock: Callable[[], float] = time.perf_counter,
    cpu_reader: Optional[CPUReader] = None,
) -> TimingReport:
    """Mean wall and CPU time of a training step for each teacher count K.

    The first K teachers of ``data`` are used for each count.
    """
    counts = sorted(set(int(k) for k in teacher_counts))
    available = len(data.teacher_views)
    if len(counts) < 2:
        raise UsageError("Timing needs at least two distinct teacher counts")
    if counts[0] < 1 or counts[-1] > available:
        raise UsageError(f"Teacher counts must lie in [1, {available}], got {counts}")
    if steps < 1:
        raise UsageError("Timing needs at least one step")
    reader = cpu_reader if cpu_reader is not None else CPUReader()

    batch = np.arange(min(config.batch_size, data.n))
    rows = []
    for count in counts:
        subset = data.select_teachers(data.teacher_names[:count])
        checkpoint = init_checkpoint(config, subset)
        x = subset.base_features[batch]
        teachers = [teacher[batch] for teacher in subset.teachers()]
        train_step(checkpoint, x, teachers)

        cpu_start = reader.process_cpu_seconds()
        start = clock()
        for _ in range(steps):
            train_step(checkpoint, x, teachers)
        elapsed = clock() - start
        cpu_elapsed = reader.process_cpu_seconds() - cpu_start
        rows.append(TimingRow(count, elapsed / steps, cpu_elapsed / steps))
        logger.info("K=%d: %.3f ms/step", count, elapsed / steps * 1e3)

    ks = np.array([row.teachers for row in rows], dtype=np.float64)
    times = np.array([row.step_seconds for row in rows])
    slope, intercept = np.polyfit(ks, times, 1)
    fitted = slope * ks + intercept
    residual = float(np.sqrt(np.mean((times - fitted) ** 2)))
    return TimingReport(
        rows=tuple(rows),
        slope=float(slope),
        intercept=float(intercept),
        residual=residual,
        steps=steps,
        logical_cores=reader.get_core_count(),
    )
