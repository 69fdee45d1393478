"""Long-tailed semi-supervised learning with rebalanced pseudo-label transfer."""

from .estimator import TRASClassifier
from .losses import ClassPrior, estimate_class_prior
from .trainer import TrainConfig, train

__all__ = ["TRASClassifier", "ClassPrior", "TrainConfig", "estimate_class_prior", "train"]
__version__ = "0.1.0"
