"""Baseline robust aggregation rules."""

from __future__ import annotations

import numpy as np

from .. import nn


def distance_sums(models: np.ndarray) -> np.ndarray:
    models = np.asarray(models, dtype=float)
    return np.array([np.linalg.norm(models - m, axis=1).sum() for m in models])


def krum_index(models: np.ndarray) -> int:
    """Index minimising the summed distance to all other models.

    This is the full-sum variant (no n - f - 2 nearest-neighbour cut). Ties
    go to the lowest index; sums within float rounding of the minimum count
    as ties.
    """
    if len(models) < 2:
        raise ValueError("krum needs at least two models")
    sums = distance_sums(models)
    return int(np.flatnonzero(sums <= sums.min() * (1 + 1e-12))[0])


def krum_select(models: np.ndarray) -> np.ndarray:
    return np.asarray(models[krum_index(models)], dtype=float)


def pearson_correlations(models: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-model Pearson correlation with ``reference``, clamped to [0, 1].

    Constant models get 0.
    """
    ref = np.asarray(reference, dtype=float)
    ref_c = ref - ref.mean()
    ref_n = np.linalg.norm(ref_c)
    if ref_n == 0:
        raise ValueError("reference vector is constant")
    X = np.asarray(models, dtype=float)
    Xc = X - X.mean(axis=1, keepdims=True)
    xn = np.linalg.norm(Xc, axis=1)
    r = np.zeros(len(X))
    ok = xn > 0
    r[ok] = (Xc[ok] @ ref_c) / (xn[ok] * ref_n)
    return np.clip(r, 0.0, 1.0)


def pearson_weights(models: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Clamped correlations normalised to sum 1 (all zeros if none survive)."""
    r = pearson_correlations(models, reference)
    total = r.sum()
    return r / total if total > 0 else r


def score_weights(models: np.ndarray, validation, spec, temperature: float = 0.05) -> np.ndarray:
    """Softmax over validation accuracies divided by ``temperature``."""
    if len(validation) == 0:
        raise ValueError("empty validation set")
    acc = np.array([nn.accuracy(spec, w, validation) for w in models])
    e = np.exp((acc - acc.max()) / temperature)
    return e / e.sum()
