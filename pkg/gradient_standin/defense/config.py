"""Moment constants for the gradient stand-in and the names of the available transforms."""

from typing import Dict, Optional, Set

VALID_TRANSFORMS: Set[str] = {
    "identity",
    "standin",
    "gaussian_noise",
    "clip",
    "topk",
}

# Adam defaults; eps is the de-facto framework value
DEFAULT_MOMENT_CONSTANTS: Dict[str, float] = {
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
}

# Module-level state
_current_constants: Optional[Dict[str, float]] = None


def set_moment_constants(beta1: float, beta2: float, eps: float) -> None:
    """
    Set the moment constants used by newly created moment states.

    Parameters
    ----------
    beta1 : float
        Decay of the first-order moment, in [0, 1).
    beta2 : float
        Decay of the second-order moment, in [0, 1).
    eps : float
        Denominator guard, > 0.

    Raises
    ------
    ValueError
        If any constant is out of range.
    """
    global _current_constants

    for name, value in (("beta1", beta1), ("beta2", beta2)):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), not {value}")
    if not eps > 0.0:
        raise ValueError(f"eps must be > 0, not {eps}")

    _current_constants = {"beta1": float(beta1), "beta2": float(beta2), "eps": float(eps)}


def get_moment_constants() -> Dict[str, float]:
    """
    Get the moment constants currently in effect.

    Returns
    -------
    dict
        Keys ``beta1``, ``beta2``, ``eps``. Falls back to
        ``DEFAULT_MOMENT_CONSTANTS`` when nothing has been set.
    """
    if _current_constants is None:
        return DEFAULT_MOMENT_CONSTANTS.copy()
    return _current_constants.copy()


def reset_moment_constants() -> None:
    """Return to the default constants (for testing)."""
    global _current_constants
    _current_constants = None
