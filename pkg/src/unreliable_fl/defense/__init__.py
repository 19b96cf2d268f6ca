from .baselines import krum_index, krum_select, pearson_correlations, pearson_weights, score_weights
from .detector import DetectorHyper, DetectorModel, detect, stack_features, train_detector
from .features import Features, featurize
from .metrics import detection_metrics
from .policies import DeepSA, FeatureRecorder, Krum, OracleDeepSA, Pearson, Score, deepsa_aggregate, make_policy
from .window import ObservationWindow, build_observation

__all__ = [
    "DeepSA",
    "DetectorHyper",
    "DetectorModel",
    "Features",
    "FeatureRecorder",
    "Krum",
    "ObservationWindow",
    "OracleDeepSA",
    "Pearson",
    "Score",
    "build_observation",
    "deepsa_aggregate",
    "detect",
    "detection_metrics",
    "featurize",
    "krum_index",
    "krum_select",
    "make_policy",
    "pearson_correlations",
    "pearson_weights",
    "score_weights",
    "stack_features",
    "train_detector",
]
