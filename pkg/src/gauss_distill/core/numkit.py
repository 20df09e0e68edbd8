"""
Dense numeric core: matrices, feed-forward MLPs, Adam and gradient checking.

Everything computes at 64-bit precision. Gradient-bearing paths are
single-threaded so identical inputs give bit-identical outputs.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .errors import NumericFailure, ShapeError, StateError, UsageError

logger = logging.getLogger(__name__)

Matrix = np.ndarray
"""Dense 2-D float64 array, rows are samples."""

ACTIVATIONS = ("relu", "identity")

LossAndGrads = Tuple[float, Sequence[np.ndarray]]


def as_matrix(values: object, checked: bool = True) -> Matrix:
    """Convert to a 2-D float64 matrix.

    Args:
        values: Anything numpy can turn into an array
        checked: Reject NaN/Inf entries

    Raises:
        ShapeError: If the result is not 2-D
        NumericFailure: If checked and an entry is not finite
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got shape {matrix.shape}")
    if checked and not np.all(np.isfinite(matrix)):
        raise NumericFailure("Matrix contains non-finite values")
    return matrix


@dataclass
class MlpParams:
    """Weights and biases of a feed-forward MLP.

    Layer i maps ``weights[i].shape[0]`` inputs to ``weights[i].shape[1]``
    outputs. Hidden layers use ``activation``; the last layer is linear.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if not self.weights:
            raise ShapeError("An MLP needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ShapeError(
                f"{len(self.weights)} weight matrices but {len(self.biases)} biases"
            )
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"Unknown activation: {self.activation}")
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise ShapeError(
                    f"Layer {index}: weight {weight.shape} and bias {bias.shape} "
                    "do not match"
                )
            if index and weight.shape[0] != self.weights[index - 1].shape[1]:
                raise ShapeError(
                    f"Layer {index} expects {weight.shape[0]} inputs but layer "
                    f"{index - 1} produces {self.weights[index - 1].shape[1]}"
                )

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> List[int]:
        """Layer widths from input to output."""
        return [self.input_dim] + [int(w.shape[1]) for w in self.weights]

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays (not copies) in a fixed order: w0, b0, w1, b1, ..."""
        ordered: List[np.ndarray] = []
        for weight, bias in zip(self.weights, self.biases):
            ordered.extend((weight, bias))
        return ordered

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def signature(self) -> Tuple[object, ...]:
        return (self.activation,) + tuple(w.shape for w in self.weights)


@dataclass
class MlpGrads:
    """Gradients with the same layout as MlpParams."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        ordered: List[np.ndarray] = []
        for weight, bias in zip(self.weights, self.biases):
            ordered.extend((weight, bias))
        return ordered


@dataclass
class MlpTape:
    """Values cached by mlp_forward for the backward pass."""

    inputs: List[np.ndarray]
    preactivations: List[np.ndarray]
    signature: Tuple[object, ...]


def init_mlp(
    dims: Sequence[int], rng: np.random.Generator, activation: str = "relu"
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    Args:
        dims: Layer widths, input first; at least two entries
        rng: Seeded generator
        activation: Hidden-layer activation
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ShapeError(f"Invalid MLP dims: {list(dims)}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, activation=activation)


def mlp_forward(params: MlpParams, x: Matrix) -> Tuple[Matrix, MlpTape]:
    """Evaluate the MLP on a batch.

    Raises:
        ShapeError: If x does not have params.input_dim columns
        NumericFailure: If x holds NaN/Inf
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"MLP expects input with {params.input_dim} columns, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericFailure("MLP input contains non-finite values")

    inputs = []
    preactivations = []
    hidden = x
    last = params.n_layers - 1
    for index, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        inputs.append(hidden)
        z = hidden @ weight + bias
        preactivations.append(z)
        if index < last and params.activation == "relu":
            hidden = np.maximum(z, 0.0)
        else:
            hidden = z
    return hidden, MlpTape(inputs, preactivations, params.signature())


def mlp_backward(
    params: MlpParams, tape: MlpTape, upstream_grad: Matrix
) -> Tuple[MlpGrads, Matrix]:
    """Back-propagate ``upstream_grad`` (d scalar / d output) through the MLP.

    The rectifier has subgradient 0 at the kink.

    Returns:
        Parameter gradients and the gradient with respect to the input.

    Raises:
        StateError: If the tape was produced by a differently shaped MLP
        ShapeError: If upstream_grad does not match the forward output
    """
    if tape.signature != params.signature() or len(tape.inputs) != params.n_layers:
        raise StateError("Tape was not produced by these MLP parameters")
    expected = tape.preactivations[-1].shape
    if upstream_grad.shape != expected:
        raise ShapeError(
            f"Upstream gradient shape {upstream_grad.shape} != output {expected}"
        )

    n_layers = params.n_layers
    weight_grads: List[np.ndarray] = [np.empty(0)] * n_layers
    bias_grads: List[np.ndarray] = [np.empty(0)] * n_layers
    grad = upstream_grad
    for index in reversed(range(n_layers)):
        if index < n_layers - 1 and params.activation == "relu":
            grad = grad * (tape.preactivations[index] > 0.0)
        weight_grads[index] = tape.inputs[index].T @ grad
        bias_grads[index] = grad.sum(axis=0)
        grad = grad @ params.weights[index].T

    grads = MlpGrads(weight_grads, bias_grads)
    if __debug__:
        for param, g in zip(params.arrays(), grads.arrays()):
            if param.shape != g.shape:
                raise StateError(f"Gradient shape {g.shape} != parameter {param.shape}")
    return grads, grad


def min_abs_preactivation(tape: MlpTape) -> float:
    """Distance of the closest hidden pre-activation to the rectifier kink."""
    hidden = tape.preactivations[:-1]
    if not hidden:
        return float("inf")
    return float(min(np.min(np.abs(z)) for z in hidden))


@dataclass
class AdamState:
    """Adam moment accumulators for an ordered list of parameter arrays."""

    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: Sequence[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            first_moment=[m.copy() for m in self.first_moment],
            second_moment=[v.copy() for v in self.second_moment],
            t=self.t,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> Tuple[Sequence[np.ndarray], AdamState]:
    """Apply one bias-corrected Adam update in place.

    Raises:
        ShapeError: If grads or moments do not mirror params
        NumericFailure: If any gradient is non-finite (nothing is updated)
    """
    if not len(params) == len(grads) == len(state.first_moment):
        raise ShapeError(
            f"{len(params)} parameters, {len(grads)} gradients, "
            f"{len(state.first_moment)} moment slots"
        )
    for index, (param, grad, moment) in enumerate(
        zip(params, grads, state.first_moment)
    ):
        if param.shape != grad.shape or param.shape != moment.shape:
            raise ShapeError(
                f"Parameter {index}: shape {param.shape}, gradient {grad.shape}, "
                f"moment {moment.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericFailure(f"Non-finite gradient for parameter {index}")

    state.t += 1
    bias_correction1 = 1.0 - state.beta1**state.t
    bias_correction2 = 1.0 - state.beta2**state.t
    step_size = state.lr / bias_correction1

    for param, grad, m, v in zip(
        params, grads, state.first_moment, state.second_moment
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        param -= step_size * m / (np.sqrt(v / bias_correction2) + state.eps)
    return params, state


def finite_diff_check(
    loss_fn: Callable[[Sequence[np.ndarray]], LossAndGrads],
    params: Sequence[np.ndarray],
    step: float = 1e-6,
    tolerance: float = 1e-4,
    zero_tol: float = 0.0,
) -> float:
    """Compare analytic gradients with central differences.

    ``loss_fn(params)`` returns ``(loss, grads)`` and must only read ``params``;
    coordinates are perturbed in place and restored.

    Args:
        loss_fn: Loss and analytic gradients for the current parameter values
        params: Parameter arrays, perturbed in place
        step: Central-difference step
        tolerance: Errors above this are logged as warnings
        zero_tol: Coordinates where both gradients are below this count as equal

    Returns:
        max |analytic - cd| / (|analytic| + |cd| + 1e-12) over all coordinates
    """
    _, analytic = loss_fn(params)
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]

    worst = 0.0
    for param, grad in zip(params, analytic):
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + step
            plus = loss_fn(params)[0]
            param[index] = original - step
            minus = loss_fn(params)[0]
            param[index] = original

            central = (plus - minus) / (2.0 * step)
            exact = float(grad[index])
            if abs(exact) < zero_tol and abs(central) < zero_tol:
                continue
            error = abs(exact - central) / (abs(exact) + abs(central) + 1e-12)
            worst = max(worst, error)

    if worst > tolerance:
        logger.warning(
            "Gradient check error %.3e exceeds tolerance %.1e", worst, tolerance
        )
    return worst
