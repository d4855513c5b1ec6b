"""
Reconstruction-quality metrics: MSE, PSNR and SSIM.

All functions take an :class:`~gradient_standin.classes.ImagePair` of
same-shape arrays and the maximum intensity ``value_range`` (255 for IDX
digits, 1.0 for synthetic data).
"""

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from gradient_standin.classes import ImagePair, Quality

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _arrays(pair: ImagePair):
    reference = np.asarray(pair.reference, dtype="float64")
    candidate = np.asarray(pair.candidate, dtype="float64")
    if reference.shape != candidate.shape:
        raise ValueError(
            f"Image shapes differ: {reference.shape} vs {candidate.shape}"
        )
    if not pair.value_range > 0:
        raise ValueError(f"value_range must be > 0, not {pair.value_range}")
    return reference, candidate


def mse(pair: ImagePair) -> float:
    """Mean of squared pixel differences."""
    reference, candidate = _arrays(pair)
    return float(np.mean((reference - candidate) ** 2))


def psnr(pair: ImagePair) -> float:
    """
    Peak signal-to-noise ratio ``10 log10(value_range² / mse)`` in dB.

    Returns ``inf`` for identical images.
    """
    error = mse(pair)
    if error == 0.0:
        return float("inf")
    return float(10.0 * np.log10(pair.value_range**2 / error))


def ssim(
    pair: ImagePair, window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2
) -> float:
    """
    Mean structural similarity over all ``window × window`` patches, stride 1.

    Parameters
    ----------
    pair : ImagePair
        Two 2-D images of the same shape.
    window : int
        Side of the uniform window.
    k1, k2 : float
        Stabilizers, ``C1 = (k1·range)²`` and ``C2 = (k2·range)²``.

    Returns
    -------
    float
        Value in [-1, 1]; 1 for identical images.

    Raises
    ------
    ValueError
        If the images are not 2-D or are smaller than the window.
    """
    reference, candidate = _arrays(pair)
    if reference.ndim != 2:
        raise ValueError(f"SSIM needs 2-D images, got shape {reference.shape}")
    if min(reference.shape) < window:
        raise ValueError(
            f"Image of shape {reference.shape} is smaller than the {window}x{window} window"
        )
    c1 = (k1 * pair.value_range) ** 2
    c2 = (k2 * pair.value_range) ** 2

    patches_x = sliding_window_view(reference, (window, window))
    patches_y = sliding_window_view(candidate, (window, window))
    axes = (-2, -1)
    mu_x = patches_x.mean(axis=axes)
    mu_y = patches_y.mean(axis=axes)
    var_x = patches_x.var(axis=axes)
    var_y = patches_y.var(axis=axes)
    cov = (
        (patches_x - mu_x[..., None, None]) * (patches_y - mu_y[..., None, None])
    ).mean(axis=axes)

    local = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(local.mean())


def as_image(vector: np.ndarray) -> np.ndarray:
    """Reshape a flat vector of square length to a square image; other shapes pass through."""
    array = np.asarray(vector, dtype="float64")
    if array.ndim == 1:
        side = int(round(np.sqrt(array.size)))
        if side * side == array.size:
            return array.reshape(side, side)
    return array


def quality(pair: ImagePair, window: int = SSIM_WINDOW) -> Quality:
    """
    All three metrics at once.

    Flat square-length vectors are compared as square images. SSIM is NaN
    when the images are too small for the window.
    """
    pair = ImagePair(as_image(pair.reference), as_image(pair.candidate), pair.value_range)
    reference = np.asarray(pair.reference)
    if reference.ndim == 2 and min(reference.shape) >= window:
        structural = ssim(pair, window=window)
    else:
        logger.debug(f"SSIM skipped for images of shape {reference.shape}")
        structural = float("nan")
    return Quality(mse=mse(pair), psnr=psnr(pair), ssim=structural)
