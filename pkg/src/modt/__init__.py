"""Multi-objective decision transformer for offline RL as sequence modeling.

Two variants: the base model predicts actions, states, and returns with
Gaussian heads under a weighted-sum objective; the trust-region variant adds
coarse action-region tokens with an ordinal (thermometer) encoding and a
Bernoulli region head. Everything runs on a small built-in reverse-mode
autodiff engine over numpy arrays, with optional compiled kernels.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .losses import LossWeights
from .model import DecisionModel, ModelConfig
from .tokens import VARIANT_MODT, VARIANT_MOTRDT

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "LossWeights",
    "DecisionModel",
    "ModelConfig",
    "VARIANT_MODT",
    "VARIANT_MOTRDT",
    "__version__",
]
