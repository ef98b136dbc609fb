"""Longitudinal masked autoencoder for irregular visit sequences.

Pretrains a joint spatio-temporal transformer by reconstructing masked
image patches, with a learnable time-aware temporal encoding and a
severity-progression-aware masking strategy, then fine-tunes the encoder to
predict the next visit's severity grade.
"""

from .config import RunConfig, load_config
from .data import SequenceRecord, SyntheticGenConfig, VisitRecord, Window, generate_synthetic
from .estimators import LongitudinalMAEPretrainer, NextVisitSeverityClassifier
from .evaluation import EvalReport, auc, threshold_scores
from .finetune import ClassifierConfig, InitPolicy, SeverityClassifier
from .masking import MaskConfig
from .model import LMAEConfig, LongitudinalMAE

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config",
    "SequenceRecord", "SyntheticGenConfig", "VisitRecord", "Window", "generate_synthetic",
    "LongitudinalMAEPretrainer", "NextVisitSeverityClassifier",
    "EvalReport", "auc", "threshold_scores",
    "ClassifierConfig", "InitPolicy", "SeverityClassifier",
    "MaskConfig", "LMAEConfig", "LongitudinalMAE",
    "__version__",
]
