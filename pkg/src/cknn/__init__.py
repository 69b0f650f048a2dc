"""Cleansed k-nearest-neighbour anomaly detection for object-centric video features."""

from .bank_search import SearchIndex, bench_throughput, knn_score, knn_score_batch
from .cleanse import FeatureBank, ScoreStats, cleanse_and_build, coreset_compress, suggest_tau
from .core import DatasetManifest, Hyperparams, ObjectRecord, TrainingView, VideoInfo, select_top_fraction
from .estimator import CKNN, fit_bundle
from .eval import auroc, build_protocol, mean_video_auroc, run_protocol
from .exceptions import (
    BuildError,
    BundleError,
    CKNNError,
    ConvergenceError,
    InvalidInputError,
    MetricError,
    ParseError,
)
from .infer import ScoreSeries, gaussian_smooth, score_video, score_view
from .io import ModelBundle, load_bundle, read_dataset, save_bundle, write_dataset
from .scorers import (
    GaussianMixtureScorer,
    GmmModel,
    KNNScorer,
    PseudoScorerConfig,
    gmm_fit,
    gmm_score,
    knn_pseudo_score_all,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CKNN",
    "BuildError",
    "BundleError",
    "CKNNError",
    "ConvergenceError",
    "DatasetManifest",
    "FeatureBank",
    "GaussianMixtureScorer",
    "GmmModel",
    "Hyperparams",
    "InvalidInputError",
    "KNNScorer",
    "MetricError",
    "ModelBundle",
    "ObjectRecord",
    "ParseError",
    "PseudoScorerConfig",
    "ScoreSeries",
    "ScoreStats",
    "SearchIndex",
    "SynthConfig",
    "TrainingView",
    "VideoInfo",
    "auroc",
    "bench_throughput",
    "build_protocol",
    "cleanse_and_build",
    "coreset_compress",
    "fit_bundle",
    "gaussian_smooth",
    "generate",
    "gmm_fit",
    "gmm_score",
    "knn_pseudo_score_all",
    "knn_score",
    "knn_score_batch",
    "load_bundle",
    "mean_video_auroc",
    "read_dataset",
    "run_protocol",
    "save_bundle",
    "score_video",
    "score_view",
    "select_top_fraction",
    "suggest_tau",
    "write_dataset",
]
