"""
Optimization-based gradient matching.

A dummy input ``x̂`` is driven towards the private input by minimizing the
distance between the gradient it induces and the observed gradient. The
objective gradient w.r.t. ``x̂`` is taken by central differences, all ``2·d``
perturbed inputs evaluated in one batched backward pass.
"""

from typing import Optional

import numpy as np
from loguru import logger

from gradient_standin.attacks.analytic import infer_label_sign
from gradient_standin.attacks.config import VALID_DISTANCES, AttackConfig
from gradient_standin.classes import AttackReport, ImagePair
from gradient_standin.metrics import quality
from gradient_standin.nn import (
    GradientSet,
    MlpSpec,
    Params,
    as_flat,
    check_congruent,
    per_example_grads,
)

MAX_INPUT_DIM = 256
MAX_HALVINGS = 40
MIN_STEP, MAX_STEP = 1e-10, 1e4


class AttackDivergedError(RuntimeError):
    """The matching objective became non-finite."""


def gradient_distance(a: GradientSet, b: GradientSet, kind: str) -> float:
    """
    Distance between two congruent gradients.

    Parameters
    ----------
    a, b : GradientSet or np.ndarray
    kind : str
        ``"l2"`` for the summed squared difference, ``"cosine"`` for
        ``1 - <a, b> / (‖a‖ ‖b‖)`` over the flattened vectors.

    Returns
    -------
    float
        Non-negative; the cosine distance lies in [0, 2].

    Raises
    ------
    ValueError
        For unknown ``kind``, incongruent shapes, or a zero vector under the
        cosine distance (undefined direction).
    """
    if kind not in VALID_DISTANCES:
        raise ValueError(f"Distance must be one of {sorted(VALID_DISTANCES)}, not {kind}")
    if not isinstance(a, np.ndarray) and not isinstance(b, np.ndarray):
        check_congruent(a, b)
    flat_a, _ = as_flat(a)
    flat_b, _ = as_flat(b, size=flat_a.size)
    if kind == "l2":
        return float(np.sum((flat_a - flat_b) ** 2))
    norm_a, norm_b = np.linalg.norm(flat_a), np.linalg.norm(flat_b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("Cosine distance of a zero gradient: undefined direction")
    cosine = np.dot(flat_a, flat_b) / (norm_a * norm_b)
    return float(np.clip(1.0 - cosine, 0.0, 2.0))


def _row_distances(rows: np.ndarray, target: np.ndarray, kind: str) -> np.ndarray:
    if kind == "l2":
        return np.sum((rows - target) ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = rows @ target / (np.linalg.norm(rows, axis=1) * np.linalg.norm(target))
    return np.clip(1.0 - cosine, 0.0, 2.0)


class _MatchingObjective:
    """Distance of the gradients induced by a stack of dummy inputs to the target."""

    def __init__(self, spec: MlpSpec, params: Params, target: np.ndarray, label: int, kind: str):
        self.spec = spec
        self.params = params
        self.target = target
        self.label = label
        self.kind = kind

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(inputs)
        count = inputs.shape[0]
        try:
            _, grads = per_example_grads(
                self.spec, self.params, inputs, np.full(count, self.label)
            )
        except FloatingPointError:
            return np.full(count, np.inf)
        rows = np.concatenate(
            [
                np.concatenate(
                    [layer.weight.reshape(count, -1), layer.bias.reshape(count, -1)], axis=1
                )
                for layer in grads
            ],
            axis=1,
        )
        return _row_distances(rows, self.target, self.kind)

    def value(self, x: np.ndarray) -> float:
        return float(self(x[None, :])[0])

    def gradient(self, x: np.ndarray, h: float) -> np.ndarray:
        dim = x.size
        offsets = h * np.eye(dim)
        values = self(np.vstack([x + offsets, x - offsets]))
        return (values[:dim] - values[dim:]) / (2.0 * h)


def _diverged(iteration: int, value: float) -> AttackDivergedError:
    message = f"Matching objective became {value} at iteration {iteration}"
    logger.error(message)
    return AttackDivergedError(message)


def grad_match_attack(
    target: GradientSet,
    spec: MlpSpec,
    params: Params,
    cfg: AttackConfig,
    true_label_known: bool = False,
    label: Optional[int] = None,
    reference: Optional[np.ndarray] = None,
    value_range: float = 1.0,
    x_init: Optional[np.ndarray] = None,
) -> AttackReport:
    """
    Reconstruct a batch-1 input by matching its gradient to ``target``.

    Descends the distance with monotone gradient descent: each iteration
    proposes a Barzilai-Borwein step and halves it until the objective
    decreases; a non-finite trial value counts as an increase. Iteration stops at ``cfg.iterations`` recorded values or
    when no step reduces the objective.

    Parameters
    ----------
    target : GradientSet
        Observed gradient (raw or defended) of one example.
    spec, params : MlpSpec, Params
        The model the gradient was computed on.
    cfg : AttackConfig
        ``distance``, ``iterations``, ``step_size``, ``seed`` and
        ``finite_diff_h`` are used.
    true_label_known : bool
        If True, ``label`` is used; otherwise the label is inferred from the
        sign of the target's last-layer bias gradient.
    label : int, optional
    reference : np.ndarray, optional
        Ground-truth input; when given the report carries MSE, PSNR and SSIM.
    value_range : float
        Intensity range used by the metrics.
    x_init : np.ndarray, optional
        Starting point; defaults to ``N(0, 1)`` draws seeded by ``cfg.seed``.

    Returns
    -------
    AttackReport
        The best input found, the label used, the non-increasing objective
        trace (first entry is the starting objective) and the metrics.

    Raises
    ------
    ValueError
        If the input dimension exceeds 256 or the label is missing.
    AttackDivergedError
        If the objective at the start point or its finite-difference
        gradient is non-finite. Non-finite trial steps are halved instead.
    """
    dim = spec.input_dim
    if dim > MAX_INPUT_DIM:
        raise ValueError(
            f"Input dimension {dim} exceeds the finite-difference budget of {MAX_INPUT_DIM}"
        )
    target_flat, _ = as_flat(target, size=spec.n_params)
    if true_label_known:
        if label is None:
            raise ValueError("true_label_known is set but no label was given")
    else:
        label = infer_label_sign(target[-1].bias)

    if x_init is None:
        x = np.random.default_rng(cfg.seed).standard_normal(dim)
    else:
        x = np.asarray(x_init, dtype="float64").copy()
        if x.shape != (dim,):
            raise ValueError(f"x_init has shape {x.shape}, expected ({dim},)")

    objective = _MatchingObjective(spec, params, target_flat, int(label), cfg.distance)
    value = objective.value(x)
    if not np.isfinite(value):
        raise _diverged(0, value)
    trace = [value]
    step = cfg.step_size
    previous = None

    while len(trace) < cfg.iterations and value > 0.0:
        grad = objective.gradient(x, cfg.finite_diff_h)
        if not np.all(np.isfinite(grad)):
            raise _diverged(len(trace), float("nan"))
        if not np.any(grad):
            break
        if previous is not None:
            s, y = x - previous[0], grad - previous[1]
            curvature = np.dot(s, y)
            if curvature > 0:
                step = float(np.clip(np.dot(s, s) / curvature, MIN_STEP, MAX_STEP))

        for _ in range(MAX_HALVINGS):
            candidate = x - step * grad
            candidate_value = objective.value(candidate)
            # non-finite candidates count as an increase
            if np.isfinite(candidate_value) and candidate_value < value:
                break
            step *= 0.5
        else:
            logger.debug(f"No descent step found after {len(trace)} iterations")
            break

        previous = (x, grad)
        x, value = candidate, candidate_value
        trace.append(value)
        if len(trace) % 250 == 0:
            logger.debug(f"iteration {len(trace)}: objective {value:.3e}")

    metrics = None
    if reference is not None:
        metrics = quality(ImagePair(np.asarray(reference, dtype="float64"), x, value_range))
    logger.info(
        f"Gradient matching ({cfg.distance}) finished after {len(trace)} iterations, "
        f"objective {trace[-1]:.3e}"
    )
    return AttackReport(
        reconstruction=x, label=int(label), objective_trace=trace, metrics=metrics
    )
