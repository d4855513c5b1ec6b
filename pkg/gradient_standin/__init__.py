"""
Desk-scale federated-learning lab for the Adam-moment gradient stand-in.

Provides:
- nn: minimal dense network kernel with backpropagation and finite differences
- defense: the gradient stand-in, baseline transforms and derivative analysis
- federation: FedAvg simulator whose clients keep their moment states private
- attacks: analytic reconstruction, sign-based label inference, gradient matching
- metrics: MSE, PSNR and SSIM
- harness: configuration, datasets, result files, experiments and the CLI

A client's round gradient is replaced before transmission:
    from gradient_standin.defense import MomentState, standin_update
    state = MomentState.fresh(grads)
    message = standin_update(state, grads)
"""

__all__ = (
    "__version__",
    "MlpSpec",
    "attacks",
    "defense",
    "federation",
    "harness",
    "metrics",
    "nn",
)

__version__ = "0.1.0"

from . import attacks, defense, federation, harness, metrics, nn
from .nn import MlpSpec
