"""
Gradient-leakage attacks used to evaluate defenses.

Provides:
- analytic: closed-form input reconstruction from an affine layer, the
  best-rank-1 residual of a gradient matrix and sign-based label inference
- matching: gradient matching over a dummy input with L2 or cosine distance
"""

__all__ = (
    "VALID_DISTANCES",
    "VALID_METHODS",
    "AttackConfig",
    "AttackDivergedError",
    "analytic_fc_reconstruct",
    "grad_match_attack",
    "gradient_distance",
    "infer_label_sign",
    "rank1_residual",
    "run_attack",
)

from .analytic import analytic_fc_reconstruct, infer_label_sign, rank1_residual
from .config import VALID_DISTANCES, VALID_METHODS, AttackConfig
from .matching import AttackDivergedError, grad_match_attack, gradient_distance
from .suite import run_attack
