"""Confidence-aware live/spoof classification with learnable Gaussian prototypes."""

from .inference import Accept, ConfidenceThreshold, Reject, confidence, decide, quantile_threshold
from .losses import LossConfig
from .prototypes import CategoryId, GaussianPrototype, PrototypeSet, mahalanobis
from .trainer import Checkpoint, GroupingMode, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
