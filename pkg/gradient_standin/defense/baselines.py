"""Baseline gradient defenses: Gaussian noise, L2 clipping and top-k compression."""

import numpy as np

from gradient_standin.nn import as_flat


def noise_transform(g, sigma: float, seed: int):
    """
    Add i.i.d. ``N(0, sigma²)`` noise to every coordinate.

    Parameters
    ----------
    g : GradientSet or np.ndarray
    sigma : float
        Standard deviation, >= 0. ``sigma = 0`` returns ``g`` unchanged.
    seed : int

    Returns
    -------
    GradientSet or np.ndarray
        Noisy gradient in the layout of ``g``.
    """
    if sigma < 0:
        raise ValueError(f"Noise scale must be >= 0, not {sigma}")
    flat, restore = as_flat(g)
    rng = np.random.default_rng(seed)
    return restore(flat + rng.normal(0.0, sigma, size=flat.size))


def clip_transform(g, c: float):
    """Rescale ``g`` to L2 norm ``c`` when its norm exceeds ``c``."""
    if not c > 0:
        raise ValueError(f"Clipping norm must be > 0, not {c}")
    flat, restore = as_flat(g)
    norm = np.linalg.norm(flat)
    if norm > c:
        flat = flat * (c / norm)
    return restore(flat.copy())


def compress_transform(g, ratio: float):
    """
    Keep the ``ceil(ratio * n)`` largest-magnitude coordinates and zero the rest.

    Ties are broken by coordinate order.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"Compression ratio must lie in (0, 1], not {ratio}")
    flat, restore = as_flat(g)
    keep = max(1, int(np.ceil(ratio * flat.size)))
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    out[order[:keep]] = flat[order[:keep]]
    return restore(out)
