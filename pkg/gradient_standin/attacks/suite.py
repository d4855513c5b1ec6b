"""Dispatch of an attack run by method name."""

from typing import Optional

import numpy as np
from loguru import logger

from gradient_standin.attacks.analytic import analytic_fc_reconstruct, infer_label_sign
from gradient_standin.attacks.config import AttackConfig
from gradient_standin.attacks.matching import grad_match_attack
from gradient_standin.classes import AttackReport, ImagePair
from gradient_standin.metrics import quality
from gradient_standin.nn import GradientSet, MlpSpec, Params


def run_attack(
    target: GradientSet,
    spec: MlpSpec,
    params: Params,
    cfg: AttackConfig,
    reference: Optional[np.ndarray] = None,
    value_range: float = 1.0,
    label: Optional[int] = None,
) -> AttackReport:
    """
    Run the attack selected by ``cfg.method`` against one batch-1 gradient.

    ``analytic_fc`` reconstructs from the first layer and reports no
    objective trace; ``label_sign`` only infers the label and reports no
    reconstruction. When ``label`` is given, gradient matching uses it instead
    of inferring one.
    """
    if cfg.method == "grad_match":
        return grad_match_attack(
            target,
            spec,
            params,
            cfg,
            true_label_known=label is not None,
            label=label,
            reference=reference,
            value_range=value_range,
        )

    inferred = infer_label_sign(target[-1].bias)
    if cfg.method == "label_sign":
        logger.info(f"Sign rule inferred label {inferred}")
        return AttackReport(reconstruction=None, label=inferred, objective_trace=[], metrics=None)

    reconstruction = analytic_fc_reconstruct(target[0].weight, target[0].bias)
    metrics = None
    if reference is not None:
        metrics = quality(
            ImagePair(np.asarray(reference, dtype="float64"), reconstruction, value_range)
        )
    logger.info("Analytic reconstruction finished")
    return AttackReport(
        reconstruction=reconstruction, label=inferred, objective_trace=[], metrics=metrics
    )
