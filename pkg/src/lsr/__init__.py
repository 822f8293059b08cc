"""Self-reinforced cascaded regression for landmark localization."""

from .data import BoundingBox, DatasetManifest, SyntheticFaceConfig
from .features import FeatureConfig
from .geometry import SimilarityTransform, mean_shape, procrustes_align
from .regressor import CascadeModel, TrainConfig, TrainSample, predict, train_cascade
from .reinforce import ReinforceConfig, initialize, run

__all__ = [
    "BoundingBox",
    "CascadeModel",
    "DatasetManifest",
    "FeatureConfig",
    "ReinforceConfig",
    "SimilarityTransform",
    "SyntheticFaceConfig",
    "TrainConfig",
    "TrainSample",
    "initialize",
    "mean_shape",
    "predict",
    "procrustes_align",
    "run",
    "train_cascade",
]

__version__ = "0.1.0"
