"""Class-incremental image classification engine.

Builds small residual networks out of adapter-augmented ghost-style
convolution blocks, trains them phase by phase with feature distillation and
prototype replay, prunes training data by prediction-error norms, and exposes
both a scikit-learn estimator and a CLI harness.
"""

from .errors import (
    ConfigError,
    DataError,
    EngineError,
    GraphError,
    NotFittedError,
    ShapeError,
    StateError,
)
from .tensor import Tape, Tensor, no_grad, sgd_step, zero_grads
from .gradcheck import grad_check

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EngineError",
    "GraphError",
    "NotFittedError",
    "ShapeError",
    "StateError",
    "Tape",
    "Tensor",
    "no_grad",
    "sgd_step",
    "zero_grads",
    "grad_check",
    "__version__",
]
