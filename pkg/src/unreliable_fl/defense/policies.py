"""Server-side aggregation policies plugged into ``run_federated``."""

from __future__ import annotations

import logging

import numpy as np

from ..fed import RoundContext, aggregate
from .baselines import krum_index, pearson_weights, score_weights
from .detector import DetectorModel
from .features import Features, featurize
from .window import build_observation

log = logging.getLogger(__name__)


def deepsa_aggregate(models: np.ndarray, weights, mask, fallback: np.ndarray | None = None) -> np.ndarray:
    """Average of the models with ``mask == 1``, weights renormalised over them.

    With an all-zero mask the ``fallback`` model (the previous global model
    in a training run) is returned and a warning is logged.
    """
    mask = np.asarray(mask, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    if mask.shape != weights.shape:
        raise ValueError("mask and weights differ in length")
    if mask.all():
        return aggregate(models, weights)
    kept = weights * mask
    total = kept.sum()
    if total <= 0:
        if fallback is None:
            raise ValueError("every model was filtered and no fallback was given")
        log.warning("all uploads flagged abnormal; keeping the previous global model")
        return np.array(fallback, dtype=float)
    idx = np.flatnonzero(mask)
    return aggregate(np.asarray(models)[idx], kept[idx] / total)


def _weighted(uploads, data_weights, w, fallback):
    w = w * data_weights
    total = w.sum()
    if total <= 0:
        log.warning("all aggregation weights are zero; keeping the previous global model")
        return np.array(fallback, dtype=float)
    return aggregate(uploads, w / total)


class DeepSA:
    """Detector-filtered averaging; the mask only affects the current round."""

    name = "deepsa"

    def __init__(self, detector, depth: int = 2):
        if depth < 1:
            raise ValueError("window depth must be >= 1")
        self.detector = detector
        self.depth = depth

    def combine(self, uploads, weights, ctx: RoundContext):
        window = build_observation(ctx.history[::-1], self.depth)
        mask = np.asarray(self.detector.predict(window, ctx.prev_global), dtype=bool)
        return deepsa_aggregate(uploads, weights, mask, fallback=ctx.prev_global), mask


class OracleDetector:
    """Masks exactly the truly corrupted uploads (or nothing with ``all_benign``)."""

    def __init__(self, all_benign: bool = False):
        self.all_benign = all_benign
        self._flags = None

    def predict(self, window, prev_global):
        if self.all_benign:
            return np.ones(window.u, dtype=bool)
        return ~self._flags


class OracleDeepSA(DeepSA):
    name = "oracle"

    def __init__(self, all_benign: bool = False, depth: int = 1):
        super().__init__(OracleDetector(all_benign), depth)

    def combine(self, uploads, weights, ctx):
        self.detector._flags = ctx.corrupted
        return super().combine(uploads, weights, ctx)


class Krum:
    name = "krum"
    depth = 1

    def combine(self, uploads, weights, ctx):
        i = krum_index(uploads)
        mask = np.zeros(len(uploads), dtype=bool)
        mask[i] = True
        return np.array(uploads[i], dtype=float), mask


class Pearson:
    name = "pearson"
    depth = 1

    def combine(self, uploads, weights, ctx):
        w = pearson_weights(uploads, ctx.prev_global)
        return _weighted(uploads, weights, w, ctx.prev_global), w > 0


class Score:
    """Validation-accuracy weighting, softmax-sharpened by ``temperature``."""

    name = "score"
    depth = 1

    def __init__(self, validation, temperature: float = 0.05):
        self.validation = validation
        self.temperature = temperature

    def combine(self, uploads, weights, ctx):
        w = score_weights(uploads, self.validation, ctx.spec, self.temperature)
        return _weighted(uploads, weights, w, ctx.prev_global), w >= 1.0 / len(w)


class FeatureRecorder:
    """Wraps a policy and records window features with ground-truth labels.

    Used for offline detector training: the wrapped policy (normally
    ``OracleDeepSA``) decides the aggregation, the recorder only observes.
    """

    def __init__(self, inner, depth: int = 2, block_size: int = 64, block_depth: int = 2, skip_first: int = 0):
        self.inner = inner
        self.name = f"record({inner.name})"
        self.depth = max(depth, inner.depth)
        self.block_size = block_size
        self.block_depth = block_depth
        self.skip_first = skip_first
        self.features: list[Features] = []
        self.labels: list[np.ndarray] = []

    def combine(self, uploads, weights, ctx):
        if ctx.k > self.skip_first:
            window = build_observation(ctx.history[::-1], self.depth)
            self.features.append(featurize(window, ctx.prev_global, self.block_size, self.block_depth))
            self.labels.append(ctx.corrupted.astype(int))
        return self.inner.combine(uploads, weights, ctx)


def make_policy(kind: str, detector: DetectorModel | None = None, depth: int = 2, validation=None, temperature: float = 0.05):
    if kind == "none":
        return None
    if kind == "deepsa":
        if detector is None:
            raise ValueError("deepsa needs a trained detector")
        return DeepSA(detector, depth)
    if kind == "oracle":
        return OracleDeepSA()
    if kind == "krum":
        return Krum()
    if kind == "pearson":
        return Pearson()
    if kind == "score":
        if validation is None:
            raise ValueError("score weighting needs a validation set")
        return Score(validation, temperature)
    raise ValueError(f"unknown defense {kind!r}")
