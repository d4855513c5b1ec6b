"""Attack configuration."""

from dataclasses import dataclass
from typing import Set

VALID_METHODS: Set[str] = {"analytic_fc", "label_sign", "grad_match"}

VALID_DISTANCES: Set[str] = {"l2", "cosine"}


@dataclass(frozen=True)
class AttackConfig:
    """
    Settings of one attack run.

    Parameters
    ----------
    method : str
        One of ``VALID_METHODS``.
    distance : str
        Gradient-matching objective, one of ``VALID_DISTANCES``.
    iterations : int
        Upper bound on recorded objective values for gradient matching.
    step_size : float
        Initial descent step for gradient matching.
    seed : int
        Seed of the dummy-input initialization.
    finite_diff_h : float
        Step of the central differences taken w.r.t. the dummy input.
    """

    method: str = "grad_match"
    distance: str = "l2"
    iterations: int = 2000
    step_size: float = 0.1
    seed: int = 0
    finite_diff_h: float = 1e-5

    def __post_init__(self):
        if self.method not in VALID_METHODS:
            raise ValueError(
                f"Attack method must be one of {sorted(VALID_METHODS)}, not {self.method}"
            )
        if self.distance not in VALID_DISTANCES:
            raise ValueError(
                f"Distance must be one of {sorted(VALID_DISTANCES)}, not {self.distance}"
            )
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, not {self.iterations}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, not {self.step_size}")
        if not self.finite_diff_h > 0:
            raise ValueError(f"finite_diff_h must be > 0, not {self.finite_diff_h}")
