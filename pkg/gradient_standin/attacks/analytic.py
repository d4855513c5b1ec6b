"""
Closed-form leakage from batch-1 gradients.

For an input-facing affine layer the weight gradient of a single example is
the outer product ``δ xᵀ`` and the bias gradient is ``δ``, so any row with a
nonzero bias entry reveals ``x`` exactly. Under softmax cross-entropy the
last-layer bias gradient is ``p - onehot(y)``, negative only at the label.
"""

import numpy as np

USABLE_ROW_THRESHOLD = 1e-12


def analytic_fc_reconstruct(grad_weight: np.ndarray, grad_bias: np.ndarray) -> np.ndarray:
    """
    Recover the input of an affine layer from its batch-1 gradients.

    Parameters
    ----------
    grad_weight : np.ndarray
        Weight gradient, shape ``[out, in]``.
    grad_bias : np.ndarray
        Bias gradient, shape ``[out]``.

    Returns
    -------
    np.ndarray
        ``grad_weight[i] / grad_bias[i]`` for the row ``i`` of largest ``|grad_bias|``.

    Raises
    ------
    ValueError
        If the shapes do not fit together or no bias entry exceeds 1e-12 in magnitude.
    """
    grad_weight = np.asarray(grad_weight, dtype="float64")
    grad_bias = np.asarray(grad_bias, dtype="float64")
    if grad_weight.ndim != 2 or grad_bias.shape != (grad_weight.shape[0],):
        raise ValueError(
            f"Gradient shapes {grad_weight.shape} and {grad_bias.shape} do not form an affine layer"
        )
    row = int(np.argmax(np.abs(grad_bias)))
    if abs(grad_bias[row]) < USABLE_ROW_THRESHOLD:
        raise ValueError(
            f"No usable row: every bias gradient is below {USABLE_ROW_THRESHOLD} in magnitude"
        )
    return grad_weight[row] / grad_bias[row]


def rank1_residual(
    matrix: np.ndarray, tol: float = 1e-10, max_iterations: int = 500
) -> float:
    """
    Relative Frobenius distance of ``matrix`` from its best rank-1 approximation.

    The leading singular triplet comes from power iteration on ``GᵀG`` started
    from a fixed random vector, stopping when the singular value changes by
    less than ``tol`` relative.

    Returns
    -------
    float
        ``‖G - σ u vᵀ‖_F / ‖G‖_F`` in [0, 1]; 0 for the zero matrix.
    """
    matrix = np.asarray(matrix, dtype="float64")
    if matrix.ndim != 2 or min(matrix.shape) < 2:
        raise ValueError(f"Need a matrix with at least 2 rows and columns, got {matrix.shape}")
    total = np.linalg.norm(matrix)
    if total == 0.0:
        return 0.0

    right = np.random.default_rng(0).standard_normal(matrix.shape[1])
    right /= np.linalg.norm(right)
    sigma = 0.0
    for _ in range(max_iterations):
        left = matrix @ right
        if not np.any(left):
            break
        left /= np.linalg.norm(left)
        right = matrix.T @ left
        updated = np.linalg.norm(right)
        right /= updated
        converged = abs(updated - sigma) <= tol * updated
        sigma = updated
        if converged:
            break

    left = matrix @ right
    sigma = np.linalg.norm(left)
    if sigma == 0.0:
        return 1.0
    left /= sigma
    residual = np.linalg.norm(matrix - sigma * np.outer(left, right)) / total
    return float(min(residual, 1.0))


def infer_label_sign(grad_bias_last: np.ndarray) -> int:
    """
    Label from the sign of the last-layer bias gradient.

    Returns the unique index with a negative entry, or the arg-min when there
    is no unique negative entry.
    """
    grad_bias_last = np.ravel(np.asarray(grad_bias_last, dtype="float64"))
    negative = np.flatnonzero(grad_bias_last < 0)
    if negative.size == 1:
        return int(negative[0])
    return int(np.argmin(grad_bias_last))
