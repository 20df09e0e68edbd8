"""
Per-teacher Gaussian kernel heads and the distillation objectives.

The NLL objective averages, over teachers and batch rows, the negative
log-likelihood of each teacher embedding under a diagonal Gaussian whose mean
and variance are predicted from the student embedding. Its per-teacher terms
estimate h(T_k | S) in nats. MSE and cosine are the point-estimate baselines.

Cross-teacher reductions are order independent: scalars go through
``math.fsum`` and gradient arrays are summed after sorting along the teacher
axis, so permuting teachers leaves every result bit-identical.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import NumericFailure, ShapeError, UsageError
from .numkit import Matrix, MlpParams, MlpTape, init_mlp, mlp_backward, mlp_forward

logger = logging.getLogger(__name__)

LOSS_KINDS = ("nll", "mse", "cosine")
LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_VAR_FLOOR = 1e-6
DEFAULT_COSINE_EPS = 1e-8


@dataclass(frozen=True)
class LossKind:
    """Which distillation objective to optimize."""

    name: str = "nll"
    cosine_eps: float = DEFAULT_COSINE_EPS

    def __post_init__(self) -> None:
        if self.name not in LOSS_KINDS:
            raise UsageError(
                f"Unknown loss kind {self.name!r}; expected one of {LOSS_KINDS}"
            )
        if not self.cosine_eps > 0:
            raise UsageError("Cosine epsilon must be positive")


@dataclass
class GaussianHead:
    """MLP mapping a student embedding to (mu_k, raw variance) for teacher k."""

    teacher_index: int
    mlp: MlpParams
    var_floor: float = DEFAULT_VAR_FLOOR

    def __post_init__(self) -> None:
        if self.mlp.output_dim % 2:
            raise ShapeError(
                f"Head output width {self.mlp.output_dim} must be even (2 * d_k)"
            )
        if not self.var_floor > 0:
            raise UsageError("Variance floor must be positive")

    @property
    def student_dim(self) -> int:
        return self.mlp.input_dim

    @property
    def teacher_dim(self) -> int:
        return self.mlp.output_dim // 2

    def arrays(self) -> List[np.ndarray]:
        return self.mlp.arrays()

    def copy(self) -> "GaussianHead":
        return GaussianHead(self.teacher_index, self.mlp.copy(), self.var_floor)


@dataclass
class LinearAdapter:
    """Bias-free linear map from the student space to a teacher space."""

    teacher_index: int
    weight: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [self.weight]

    def copy(self) -> "LinearAdapter":
        return LinearAdapter(self.teacher_index, self.weight.copy())


Kernel = Union[GaussianHead, LinearAdapter, None]


@dataclass(frozen=True)
class EntropyEstimate:
    """Per-teacher loss terms; for NLL these are h(T_k | S) in nats."""

    per_teacher: Tuple[float, ...]
    sample_count: int

    @property
    def mean(self) -> float:
        return math.fsum(self.per_teacher) / len(self.per_teacher)


@dataclass
class HeadOutput:
    mu: Matrix
    var: Matrix
    raw: Matrix
    tape: MlpTape


@dataclass
class LossResult:
    """Loss value with gradients for the student output and every kernel.

    ``kernel_grads[k]`` mirrors ``kernel.arrays()`` (empty for no kernel).
    ``total`` is the un-normalized sum over teachers and batch rows.
    """

    value: float
    grad_s: Matrix
    kernel_grads: List[List[np.ndarray]]
    per_teacher: EntropyEstimate
    total: float


@dataclass(frozen=True)
class DisagreementBound:
    """Upper bounds 1 - exp(-h) on teacher/student Bayes-rule disagreement."""

    per_teacher_raw: Tuple[float, ...]
    per_teacher_clamped: Tuple[float, ...]
    averaged_raw: float
    averaged_clamped: float


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    """Raw value whose softplus is y (y > 0)."""
    return float(y + math.log(-math.expm1(-y)))


def init_head(
    teacher_index: int,
    student_dim: int,
    teacher_dim: int,
    depth: int,
    hidden: int,
    rng: np.random.Generator,
    var_floor: float = DEFAULT_VAR_FLOOR,
) -> GaussianHead:
    """Randomly initialized head with ``depth`` layers of width ``hidden``."""
    if depth < 1:
        raise UsageError("Head depth must be at least 1")
    dims = [student_dim] + [hidden] * (depth - 1) + [2 * teacher_dim]
    return GaussianHead(teacher_index, init_mlp(dims, rng), var_floor)


def identity_head(
    teacher_index: int, dim: int, var_floor: float = DEFAULT_VAR_FLOOR
) -> GaussianHead:
    """Frozen head with mu = s and unit variance on every coordinate."""
    weight = np.hstack([np.eye(dim), np.zeros((dim, dim))])
    bias = np.concatenate(
        [np.zeros(dim), np.full(dim, inverse_softplus(1.0 - var_floor))]
    )
    mlp = MlpParams([weight], [bias], activation="identity")
    return GaussianHead(teacher_index, mlp, var_floor)


def init_adapter(
    teacher_index: int, student_dim: int, teacher_dim: int, rng: np.random.Generator
) -> LinearAdapter:
    limit = math.sqrt(6.0 / (student_dim + teacher_dim))
    weight = rng.uniform(-limit, limit, size=(student_dim, teacher_dim))
    return LinearAdapter(teacher_index, weight)


def init_kernels(
    kind: LossKind,
    student_dim: int,
    teacher_dims: Sequence[int],
    depth: int,
    hidden: int,
    rng: np.random.Generator,
    var_floor: float = DEFAULT_VAR_FLOOR,
) -> List[Kernel]:
    """One kernel per teacher: Gaussian heads for NLL, adapters otherwise.

    Baseline teachers whose dim equals the student dim get no adapter.
    """
    kernels: List[Kernel] = []
    for index, teacher_dim in enumerate(teacher_dims):
        if kind.name == "nll":
            kernels.append(
                init_head(
                    index, student_dim, teacher_dim, depth, hidden, rng, var_floor
                )
            )
        elif teacher_dim != student_dim:
            kernels.append(init_adapter(index, student_dim, teacher_dim, rng))
        else:
            kernels.append(None)
    return kernels


def kernel_arrays(kernel: Kernel) -> List[np.ndarray]:
    return [] if kernel is None else kernel.arrays()


def head_forward(head: GaussianHead, s: Matrix) -> HeadOutput:
    """Predict the Gaussian mean and variance of teacher k from s.

    Variance is softplus(raw) + var_floor, always >= var_floor.
    """
    out, tape = mlp_forward(head.mlp, s)
    dim = head.teacher_dim
    raw = out[:, dim:]
    return HeadOutput(
        mu=out[:, :dim], var=softplus(raw) + head.var_floor, raw=raw, tape=tape
    )


def gaussian_nll_terms(mu: Matrix, var: Matrix, t: Matrix) -> np.ndarray:
    """Per-row NLL of t under N(mu, diag(var)), summed over coordinates."""
    resid = t - mu
    return np.sum(0.5 * (LOG_2PI + np.log(var)) + resid**2 / (2.0 * var), axis=1)


def _ordered_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    if len(arrays) == 1:
        return np.array(arrays[0], copy=True)
    stacked = np.stack(arrays)
    stacked.sort(axis=0)
    return stacked.sum(axis=0)


def _check_batch(s: Matrix, teachers: Sequence[Matrix], n_kernels: int) -> int:
    if not teachers:
        raise UsageError("At least one teacher is required")
    if n_kernels != len(teachers):
        raise UsageError(f"{n_kernels} kernels for {len(teachers)} teachers")
    batch = s.shape[0]
    for index, teacher in enumerate(teachers):
        if teacher.ndim != 2 or teacher.shape[0] != batch:
            raise ShapeError(
                f"Teacher {index} has shape {teacher.shape}, student batch is {batch}"
            )
    return batch


def _finite_or_raise(value: float, name: str) -> float:
    if not math.isfinite(value):
        raise NumericFailure(f"{name} loss is not finite")
    return value


def gaussian_nll(
    heads: Sequence[GaussianHead], s: Matrix, teachers: Sequence[Matrix]
) -> LossResult:
    """Mean over teachers and rows of the Gaussian NLL of each teacher embedding.

    Raises:
        UsageError: If no teacher is given
        ShapeError: If batches or dims do not line up
        NumericFailure: If the loss is not finite
    """
    batch = _check_batch(s, teachers, len(heads))
    n_teachers = len(teachers)
    scale = 1.0 / (n_teachers * batch)

    terms = []
    sums = []
    grad_parts = []
    head_grads = []
    for head, teacher in zip(heads, teachers):
        out = head_forward(head, s)
        if teacher.shape[1] != head.teacher_dim:
            raise ShapeError(
                f"Head {head.teacher_index} predicts {head.teacher_dim} dims, "
                f"teacher has {teacher.shape[1]}"
            )
        per_row = gaussian_nll_terms(out.mu, out.var, teacher)
        terms.append(float(per_row.mean()))
        sums.append(float(per_row.sum()))

        resid = teacher - out.mu
        grad_mu = -resid / out.var * scale
        grad_var = (0.5 / out.var - resid**2 / (2.0 * out.var**2)) * scale
        upstream = np.concatenate([grad_mu, grad_var * expit(out.raw)], axis=1)
        grads, grad_in = mlp_backward(head.mlp, out.tape, upstream)
        head_grads.append(grads.arrays())
        grad_parts.append(grad_in)

    value = _finite_or_raise(math.fsum(terms) / n_teachers, "NLL")
    return LossResult(
        value=value,
        grad_s=_ordered_sum(grad_parts),
        kernel_grads=head_grads,
        per_teacher=EntropyEstimate(tuple(terms), batch),
        total=math.fsum(sums),
    )


def _adapt(kernel: Kernel, s: Matrix, teacher: Matrix, index: int) -> Matrix:
    projected = s if kernel is None else s @ kernel.weight
    if projected.shape[1] != teacher.shape[1]:
        raise UsageError(
            f"Teacher {index} has dim {teacher.shape[1]} but the student has "
            f"{s.shape[1]}; a linear adapter is required"
        )
    return projected


def _adapter_backward(
    kernel: Kernel, s: Matrix, grad_projected: Matrix
) -> Tuple[List[np.ndarray], Matrix]:
    if kernel is None:
        return [], grad_projected
    return [s.T @ grad_projected], grad_projected @ kernel.weight.T


def mse_loss(
    s: Matrix,
    teachers: Sequence[Matrix],
    adapters: Optional[Sequence[Kernel]] = None,
) -> LossResult:
    """Squared distance between (adapted) student and each teacher.

    ``value`` is normalized by K * batch, ``total`` is the raw double sum.
    """
    adapters = list(adapters) if adapters is not None else [None] * len(teachers)
    batch = _check_batch(s, teachers, len(adapters))
    scale = 1.0 / (len(teachers) * batch)

    terms = []
    sums = []
    grad_parts = []
    adapter_grads = []
    for index, (adapter, teacher) in enumerate(zip(adapters, teachers)):
        diff = _adapt(adapter, s, teacher, index) - teacher
        per_row = np.sum(diff**2, axis=1)
        terms.append(float(per_row.mean()))
        sums.append(float(per_row.sum()))
        grads, grad_s = _adapter_backward(adapter, s, 2.0 * diff * scale)
        adapter_grads.append(grads)
        grad_parts.append(grad_s)

    value = _finite_or_raise(math.fsum(terms) / len(teachers), "MSE")
    return LossResult(
        value=value,
        grad_s=_ordered_sum(grad_parts),
        kernel_grads=adapter_grads,
        per_teacher=EntropyEstimate(tuple(terms), batch),
        total=math.fsum(sums),
    )


def cosine_loss(
    s: Matrix,
    teachers: Sequence[Matrix],
    eps: float = DEFAULT_COSINE_EPS,
    adapters: Optional[Sequence[Kernel]] = None,
) -> LossResult:
    """Negative summed cosine similarity, denominator clamped at eps.

    The value lies in [-K * batch, K * batch] and is not normalized.
    """
    if not eps > 0:
        raise UsageError("Cosine epsilon must be positive")
    adapters = list(adapters) if adapters is not None else [None] * len(teachers)
    batch = _check_batch(s, teachers, len(adapters))

    terms = []
    sums = []
    grad_parts = []
    adapter_grads = []
    for index, (adapter, teacher) in enumerate(zip(adapters, teachers)):
        projected = _adapt(adapter, s, teacher, index)
        dot = np.sum(projected * teacher, axis=1)
        norm_s = np.linalg.norm(projected, axis=1)
        norm_t = np.linalg.norm(teacher, axis=1)
        norms = norm_s * norm_t
        denom = np.maximum(norms, eps)
        cos = dot / denom
        terms.append(-float(cos.mean()))
        sums.append(float(cos.sum()))

        # d cos / d s = t / denom - cos * s / |s|^2 while the clamp is inactive
        grad_cos = teacher / denom[:, None]
        active = norms > eps
        sq_norm = np.where(active, norm_s**2, 1.0)
        grad_cos -= (active * cos / sq_norm)[:, None] * projected
        grads, grad_s = _adapter_backward(adapter, s, -grad_cos)
        adapter_grads.append(grads)
        grad_parts.append(grad_s)

    value = _finite_or_raise(-math.fsum(sums), "Cosine")
    return LossResult(
        value=value,
        grad_s=_ordered_sum(grad_parts),
        kernel_grads=adapter_grads,
        per_teacher=EntropyEstimate(tuple(terms), batch),
        total=value,
    )


def distill_objective(
    kind: LossKind,
    kernels: Sequence[Kernel],
    s: Matrix,
    teachers: Sequence[Matrix],
) -> LossResult:
    """Dispatch to the objective selected by ``kind``."""
    if kind.name == "nll":
        heads = [k for k in kernels if isinstance(k, GaussianHead)]
        if len(heads) != len(kernels):
            raise UsageError("NLL distillation needs a Gaussian head per teacher")
        return gaussian_nll(heads, s, teachers)
    if any(isinstance(k, GaussianHead) for k in kernels):
        raise UsageError(f"{kind.name} distillation takes adapters, not heads")
    if kind.name == "mse":
        return mse_loss(s, teachers, kernels)
    return cosine_loss(s, teachers, kind.cosine_eps, kernels)


def disagreement_bound(h: EntropyEstimate) -> DisagreementBound:
    """1 - exp(-h_k) per teacher and 1 - exp(-mean h), raw and clamped to [0, 1].

    Negative differential entropies give negative (vacuous) raw bounds.
    """
    per_teacher = np.asarray(h.per_teacher, dtype=np.float64)
    raw = -np.expm1(-per_teacher)
    averaged = float(-np.expm1(-h.mean))
    if np.any(per_teacher < 0):
        logger.debug("Negative entropy estimate; bound clamped to 0")
    return DisagreementBound(
        per_teacher_raw=tuple(float(v) for v in raw),
        per_teacher_clamped=tuple(float(v) for v in np.clip(raw, 0.0, 1.0)),
        averaged_raw=averaged,
        averaged_clamped=min(1.0, max(0.0, averaged)),
    )
