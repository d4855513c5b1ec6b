"""
Client-side gradient defenses.

The Adam-moment stand-in replaces a round gradient ``g`` by
``m̂ / (sqrt(v̂) + eps)`` computed from moments the client never transmits.
Baselines (Gaussian noise, L2 clipping, top-k compression) and the analysis
of the stand-in's derivative live here as well.

To change the moment constants of newly created states:
    import gradient_standin.defense as defense
    defense.set_moment_constants(beta1=0.9, beta2=0.99, eps=1e-8)
"""

__all__ = (
    "VALID_TRANSFORMS",
    "MomentState",
    "TransformKind",
    "apply_transform",
    "approx_standin_jacobian",
    "approximation_alpha",
    "clip_transform",
    "compress_transform",
    "exact_standin_jacobian",
    "finite_difference_jacobian",
    "get_moment_constants",
    "noise_transform",
    "reset_moment_constants",
    "set_moment_constants",
    "standin_preview",
    "standin_update",
)

from .baselines import clip_transform, compress_transform, noise_transform
from .config import (
    VALID_TRANSFORMS,
    get_moment_constants,
    reset_moment_constants,
    set_moment_constants,
)
from .standin import (
    MomentState,
    approx_standin_jacobian,
    approximation_alpha,
    exact_standin_jacobian,
    finite_difference_jacobian,
    standin_preview,
    standin_update,
)
from .transforms import TransformKind, apply_transform
