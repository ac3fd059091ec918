"""Deepfake video detection from fused identity, behavioral, and geometric
per-frame signatures, classified by reference-set nearest neighbors over
triplet-learned embeddings."""

__version__ = "0.1.0"

from .descriptor import DBaGSlice, FeatureStats, fuse, slice_features
from .geometry import RegionSpec, default_region_spec, geometric_features_frame
from .network import DBaGNet, ModelConfig, pairwise_distance, triplet_loss
from .trainer import ReferenceSet, TrainConfig, build_triplets, train
from .inference import InferenceConfig, knn_predict, video_verdict
from .evalharness import EvalReport, compute_metrics, make_split, run_experiment

__all__ = [
    "DBaGNet",
    "DBaGSlice",
    "EvalReport",
    "FeatureStats",
    "InferenceConfig",
    "ModelConfig",
    "ReferenceSet",
    "RegionSpec",
    "TrainConfig",
    "build_triplets",
    "compute_metrics",
    "default_region_spec",
    "fuse",
    "geometric_features_frame",
    "knn_predict",
    "make_split",
    "pairwise_distance",
    "run_experiment",
    "slice_features",
    "train",
    "triplet_loss",
    "video_verdict",
    "__version__",
]
