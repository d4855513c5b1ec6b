"""
Minimal dense neural-network kernel.

Tensors are float64 numpy arrays. Parameters and gradients share one layout: a
tuple with one ``Layer(weight, bias)`` namedtuple per affine layer, ``weight``
shaped ``[out, in]`` and ``bias`` shaped ``[out]``. Hidden layers apply the
activation of the :class:`MlpSpec`, the last layer feeds a softmax
cross-entropy head.

Batches are stacked along axis 0. Reductions over a batch are always done by
numpy along that axis, in index order, so results are reproducible.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from gradient_standin.classes import ForwardTrace, Layer

Params = Tuple[Layer, ...]
GradientSet = Tuple[Layer, ...]

VALID_ACTIVATIONS = {"sigmoid", "tanh", "relu"}


@dataclass(frozen=True)
class MlpSpec:
    """
    Architecture of a fully-connected classifier.

    Parameters
    ----------
    layer_sizes : tuple of int
        Input dimension, hidden widths, class count. ``(2, 2)`` is a single
        affine layer.
    activation : str
        Hidden activation, one of ``VALID_ACTIVATIONS``.
    """

    layer_sizes: Tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(size) for size in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(
                f"An MLP needs at least an input and an output size, got {sizes}"
            )
        if any(size < 1 for size in sizes):
            raise ValueError(f"All layer sizes must be >= 1, got {sizes}")
        if self.activation not in VALID_ACTIVATIONS:
            raise ValueError(
                f"Activation must be one of {VALID_ACTIVATIONS}, not {self.activation}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def shapes(self) -> Tuple[Tuple[int, int], ...]:
        """Weight shapes ``(out, in)`` per layer."""
        return tuple(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))

    @property
    def n_params(self) -> int:
        return sum(out * (inp + 1) for out, inp in self.shapes)

    def describe(self) -> str:
        """Short label such as ``mlp-64-16-4-tanh``."""
        return "mlp-" + "-".join(str(s) for s in self.layer_sizes) + f"-{self.activation}"


def init_params(spec: MlpSpec, seed: int) -> Params:
    """
    Xavier-uniform weights, zero biases.

    Weights of a layer are drawn from ``uniform(-s, s)`` with
    ``s = sqrt(6 / (fan_in + fan_out))``. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    params = []
    for fan_out, fan_in in spec.shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(
            Layer(
                weight=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out, dtype="float64"),
            )
        )
    return tuple(params)


def _activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        # overflow-free form of 1 / (1 + exp(-z))
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.maximum(z, 0.0)


def _activation_derivative(z: np.ndarray, a: np.ndarray, name: str) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return (z > 0.0).astype("float64")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def check_params(spec: MlpSpec, params: Params) -> None:
    """Raise ``ValueError`` unless ``params`` matches the layout of ``spec``."""
    if len(params) != len(spec.shapes):
        raise ValueError(
            f"Expected {len(spec.shapes)} layers for {spec.describe()}, got {len(params)}"
        )
    for index, (layer, (fan_out, fan_in)) in enumerate(zip(params, spec.shapes)):
        if np.shape(layer.weight) != (fan_out, fan_in) or np.shape(layer.bias) != (
            fan_out,
        ):
            raise ValueError(
                f"Layer {index} has shapes {np.shape(layer.weight)}/{np.shape(layer.bias)}, "
                f"expected {(fan_out, fan_in)}/{(fan_out,)}"
            )


def check_congruent(a: GradientSet, b: GradientSet) -> None:
    """Raise ``ValueError`` unless two parameter-shaped sets have identical shapes."""
    if len(a) != len(b):
        raise ValueError(f"Layer count mismatch: {len(a)} vs {len(b)}")
    for index, (left, right) in enumerate(zip(a, b)):
        if np.shape(left.weight) != np.shape(right.weight) or np.shape(
            left.bias
        ) != np.shape(right.bias):
            raise ValueError(f"Shape mismatch in layer {index}")


def _as_batch(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(x, dtype="float64"))
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ValueError(
            f"Input of shape {np.shape(x)} does not match input dimension {spec.input_dim}"
        )
    return batch


def _as_labels(spec: MlpSpec, labels, count: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (count,):
        raise ValueError(f"Expected {count} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError(f"Labels must be class indices, got {labels}")
        labels = labels.astype("int64")
    if np.any(labels < 0) or np.any(labels >= spec.n_classes):
        raise ValueError(
            f"Labels must lie in [0, {spec.n_classes}), got {labels.tolist()}"
        )
    return labels


def _forward_batch(spec: MlpSpec, params: Params, batch: np.ndarray):
    check_params(spec, params)
    pre_activations, activations = [], [batch]
    hidden = batch
    last = len(params) - 1
    for index, layer in enumerate(params):
        z = hidden @ layer.weight.T + layer.bias
        pre_activations.append(z)
        if index < last:
            hidden = _activate(z, spec.activation)
            activations.append(hidden)
    logits = pre_activations[-1]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("Forward pass produced non-finite logits")
    return pre_activations, activations, logits, _softmax(logits)


def forward(spec: MlpSpec, params: Params, x: np.ndarray) -> ForwardTrace:
    """
    Forward pass for a single input.

    Parameters
    ----------
    spec : MlpSpec
    params : Params
    x : np.ndarray
        Input vector of length ``spec.input_dim``.

    Returns
    -------
    ForwardTrace
        ``pre_activations`` per layer, ``activations`` as the input to every
        layer (the first entry is ``x``), the final logits and softmax
        probabilities.
    """
    if np.ndim(x) != 1:
        raise ValueError(f"forward expects a single input vector, got shape {np.shape(x)}")
    pre, acts, logits, probs = _forward_batch(spec, params, _as_batch(spec, x))
    return ForwardTrace(
        pre_activations=[z[0] for z in pre],
        activations=[a[0] for a in acts],
        logits=logits[0],
        probabilities=probs[0],
    )


def predict(spec: MlpSpec, params: Params, inputs: np.ndarray) -> np.ndarray:
    """Arg-max class for each row of ``inputs``."""
    _, _, logits, _ = _forward_batch(spec, params, _as_batch(spec, inputs))
    return np.argmax(logits, axis=1)


def accuracy(spec: MlpSpec, params: Params, inputs: np.ndarray, labels) -> float:
    batch = _as_batch(spec, inputs)
    labels = _as_labels(spec, labels, batch.shape[0])
    return float(np.mean(predict(spec, params, batch) == labels))


def batch_loss(spec: MlpSpec, params: Params, inputs: np.ndarray, labels) -> float:
    """Mean cross-entropy over a batch."""
    batch = _as_batch(spec, inputs)
    labels = _as_labels(spec, labels, batch.shape[0])
    _, _, logits, _ = _forward_batch(spec, params, batch)
    return float(-_log_softmax(logits)[np.arange(batch.shape[0]), labels].mean())


def per_example_grads(
    spec: MlpSpec, params: Params, inputs: np.ndarray, labels
) -> Tuple[np.ndarray, GradientSet]:
    """
    Losses and gradients for every row of ``inputs`` separately.

    Returns
    -------
    tuple
        ``(losses, grads)``: ``losses`` has shape ``[n]``; ``grads`` has the
        Params layout with an extra leading axis of length ``n``.
    """
    batch = _as_batch(spec, inputs)
    labels = _as_labels(spec, labels, batch.shape[0])
    pre, acts, logits, probs = _forward_batch(spec, params, batch)
    rows = np.arange(batch.shape[0])
    losses = -_log_softmax(logits)[rows, labels]

    # softmax cross-entropy: dL/dlogits = p - onehot(label)
    delta = probs.copy()
    delta[rows, labels] -= 1.0
    grads = [None] * len(params)
    for index in reversed(range(len(params))):
        grads[index] = Layer(
            weight=delta[:, :, None] * acts[index][:, None, :], bias=delta
        )
        if index > 0:
            delta = (delta @ params[index].weight) * _activation_derivative(
                pre[index - 1], acts[index], spec.activation
            )
    return losses, tuple(grads)


def batch_loss_and_grad(
    spec: MlpSpec, params: Params, inputs: np.ndarray, labels
) -> Tuple[float, GradientSet]:
    """Mean loss and mean gradient over a batch (reduced in index order)."""
    losses, grads = per_example_grads(spec, params, inputs, labels)
    mean_grads = tuple(
        Layer(weight=layer.weight.mean(axis=0), bias=layer.bias.mean(axis=0))
        for layer in grads
    )
    return float(losses.mean()), mean_grads


def loss(spec: MlpSpec, params: Params, x: np.ndarray, label: int) -> float:
    """Cross-entropy ``-log p_label`` for a single input."""
    batch = _as_batch(spec, x)
    labels = _as_labels(spec, label, 1)
    _, _, logits, _ = _forward_batch(spec, params, batch)
    return float(-_log_softmax(logits)[0, labels[0]])


def loss_and_grad(
    spec: MlpSpec, params: Params, x: np.ndarray, label: int
) -> Tuple[float, GradientSet, ForwardTrace]:
    """
    Loss, backpropagated gradients and forward trace for a single input.

    The last-layer bias gradient equals ``p - onehot(label)``.

    Raises
    ------
    ValueError
        If ``label`` is not a valid class index or shapes do not match.
    """
    if np.ndim(x) != 1:
        raise ValueError(f"loss_and_grad expects a single input vector, got shape {np.shape(x)}")
    losses, grads = per_example_grads(spec, params, x, label)
    trace = forward(spec, params, x)
    single = tuple(Layer(weight=g.weight[0], bias=g.bias[0]) for g in grads)
    return float(losses[0]), single, trace


def flatten(grads: GradientSet) -> np.ndarray:
    """Concatenate weights and biases layer by layer into one flat vector."""
    return np.concatenate(
        [np.concatenate([np.ravel(layer.weight), np.ravel(layer.bias)]) for layer in grads]
    ).astype("float64")


def unflatten_like(vector: np.ndarray, template: GradientSet) -> GradientSet:
    """Inverse of :func:`flatten`, using the shapes of ``template``."""
    vector = np.asarray(vector, dtype="float64")
    expected = sum(np.size(layer.weight) + np.size(layer.bias) for layer in template)
    if vector.shape != (expected,):
        raise ValueError(f"Flat vector has shape {vector.shape}, expected ({expected},)")
    layers, offset = [], 0
    for layer in template:
        w_size, b_size = np.size(layer.weight), np.size(layer.bias)
        weight = vector[offset : offset + w_size].reshape(np.shape(layer.weight))
        offset += w_size
        bias = vector[offset : offset + b_size].reshape(np.shape(layer.bias))
        offset += b_size
        layers.append(Layer(weight=weight.copy(), bias=bias.copy()))
    return tuple(layers)


def as_flat(values, size: Optional[int] = None) -> Tuple[np.ndarray, Callable]:
    """
    Flat float64 view of a GradientSet or array, plus the function restoring the
    original layout.

    Raises
    ------
    ValueError
        If ``size`` is given and the flat vector has a different length.
    """
    if isinstance(values, np.ndarray) or np.isscalar(values):
        array = np.asarray(values, dtype="float64")
        flat = array.ravel()
        shape = array.shape

        def restore(vector):
            return np.asarray(vector, dtype="float64").reshape(shape)

    else:
        template = tuple(values)
        flat = flatten(template)

        def restore(vector):
            return unflatten_like(vector, template)

    if size is not None and flat.size != size:
        raise ValueError(f"Expected {size} gradient coordinates, got {flat.size}")
    return flat, restore


def central_difference(
    fn: Callable[[np.ndarray], float], theta: np.ndarray, h: float
) -> np.ndarray:
    """
    Central-difference gradient ``(f(θ+h e_i) - f(θ-h e_i)) / 2h`` of a scalar function.
    """
    if not h > 0:
        raise ValueError(f"Finite-difference step must be > 0, got {h}")
    theta = np.asarray(theta, dtype="float64")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        grad.flat[i] = (fn(plus) - fn(minus)) / (2.0 * h)
    return grad


def finite_diff_gradient(
    spec: MlpSpec, params: Params, x: np.ndarray, label: int, h: float = 1e-5
) -> GradientSet:
    """Central finite differences of the loss w.r.t. every parameter."""
    check_params(spec, params)
    theta = flatten(params)

    def objective(vector: np.ndarray) -> float:
        return loss(spec, unflatten_like(vector, params), x, label)

    return unflatten_like(central_difference(objective, theta, h), params)


def sgd_step(params: Params, grads: GradientSet, lr: float) -> Params:
    """Plain SGD update ``θ ← θ - lr·g``."""
    if lr < 0:
        raise ValueError(f"Learning rate must be >= 0, got {lr}")
    check_congruent(params, grads)
    return tuple(
        Layer(weight=p.weight - lr * g.weight, bias=p.bias - lr * g.bias)
        for p, g in zip(params, grads)
    )


def scale(grads: GradientSet, factor: float) -> GradientSet:
    return tuple(
        Layer(weight=factor * layer.weight, bias=factor * layer.bias) for layer in grads
    )


def subtract(a: GradientSet, b: GradientSet) -> GradientSet:
    check_congruent(a, b)
    return tuple(
        Layer(weight=left.weight - right.weight, bias=left.bias - right.bias)
        for left, right in zip(a, b)
    )


def zeros_like(template: Sequence[Layer]) -> GradientSet:
    return tuple(
        Layer(weight=np.zeros_like(layer.weight), bias=np.zeros_like(layer.bias))
        for layer in template
    )
