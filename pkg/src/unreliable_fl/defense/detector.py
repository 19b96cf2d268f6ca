"""Offline-trained upload detector with two classifier branches.

The dense branch sees scale and direction features, the block branch sees
stride-``B`` block statistics over the ``l`` newest window columns. Each
branch is a small sigmoid network over standardised features that outputs
the probability of an abnormal upload.

Branch verdicts are combined with ``"and"`` by default: a client is benign
only if both branches accept it. ``"xor"`` reproduces the literal
exclusive-or combination and marks a client abnormal only when exactly one
branch rejects it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..nn import ModelSpec
from ..rng import stream
from .features import BLOCK_NAMES, DENSE_NAMES, RECIPE, Features, featurize
from .window import ObservationWindow

FORMAT_VERSION = 1
COMBINERS = ("and", "xor")


@dataclass(frozen=True)
class DetectorHyper:
    hidden: int = 16
    epochs: int = 600
    lr: float = 0.02
    seed: int = 0
    threshold: float = 0.5
    block_size: int = 64
    block_depth: int = 2
    combiner: str = "and"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.block_size < 1 or self.block_depth < 1:
            raise ValueError("block size and depth must be >= 1")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")


@dataclass(eq=False)
class Branch:
    names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    spec: ModelSpec
    params: np.ndarray
    threshold: float = 0.5

    def prob_abnormal(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean) / self.scale
        _, logits = nn._forward(self.spec, nn.unpack(self.spec, self.params), Z)
        return 0.5 * (1.0 + np.tanh(0.5 * logits[:, 0]))

    def flags(self, X: np.ndarray) -> np.ndarray:
        return self.prob_abnormal(X) >= self.threshold


@dataclass(eq=False)
class DetectorModel:
    dense: Branch
    block: Branch
    s_w: int | None
    block_size: int = 64
    block_depth: int = 2
    combiner: str = "and"
    recipe: str = RECIPE
    info: dict = field(default_factory=dict)

    def classify(self, feats: Features) -> np.ndarray:
        """Boolean benign mask from precomputed features."""
        a = self.dense.flags(feats.dense)
        b = self.block.flags(feats.block)
        abnormal = (a | b) if self.combiner == "and" else (a ^ b)
        return ~abnormal

    def predict(self, window: ObservationWindow, prev_global: np.ndarray) -> np.ndarray:
        return detect(self, window, prev_global)

    def save(self, path) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "recipe": self.recipe,
            "s_w": self.s_w,
            "block_size": self.block_size,
            "block_depth": self.block_depth,
            "combiner": self.combiner,
            "info": self.info,
        }
        arrays = {}
        for key, br in (("dense", self.dense), ("block", self.block)):
            meta[key] = {"names": list(br.names), "spec": br.spec.to_dict(), "threshold": br.threshold}
            arrays[f"{key}_mean"] = br.mean
            arrays[f"{key}_scale"] = br.scale
            arrays[f"{key}_params"] = br.params
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "DetectorModel":
        with np.load(Path(path)) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            if meta.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported detector format {meta.get('format_version')!r}")
            if meta.get("recipe") != RECIPE:
                raise ValueError(f"{path}: feature recipe {meta.get('recipe')!r} is not {RECIPE!r}")
            branches = {}
            for key in ("dense", "block"):
                m = meta[key]
                spec = m["spec"]
                branches[key] = Branch(
                    tuple(m["names"]),
                    z[f"{key}_mean"],
                    z[f"{key}_scale"],
                    ModelSpec(tuple(spec["layer_sizes"]), output=spec["output"], kind=spec["kind"], task=spec["task"]),
                    z[f"{key}_params"],
                    m["threshold"],
                )
        return cls(
            branches["dense"], branches["block"], meta["s_w"], meta["block_size"], meta["block_depth"],
            meta["combiner"], meta["recipe"], meta.get("info", {}),
        )


def _fit_branch(X, y, names, hyper: DetectorHyper, salt: int) -> Branch:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    # canonical row order makes training independent of the input order
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    idx = np.concatenate([majority, np.resize(minority, len(majority))])
    idx.sort()
    X, y = X[idx], y[idx]

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale

    if hyper.hidden > 0:
        spec = ModelSpec((Z.shape[1], hyper.hidden, 1), output="sigmoid")
        w = nn.init_params(spec, int(stream(hyper.seed, salt, 0, "detector").integers(2**31)))
    else:
        spec = ModelSpec((Z.shape[1], 1), output="sigmoid")
        w = np.zeros(spec.n_params)
    batch = nn.Batch(Z, y)
    m1 = np.zeros_like(w)
    m2 = np.zeros_like(w)
    b1, b2 = 0.9, 0.999
    for t in range(1, hyper.epochs + 1):
        g = nn.loss_and_grad(spec, w, batch)[1]
        m1 = b1 * m1 + (1 - b1) * g
        m2 = b2 * m2 + (1 - b2) * g * g
        w = w - hyper.lr * (m1 / (1 - b1**t)) / (np.sqrt(m2 / (1 - b2**t)) + 1e-8)
    return Branch(tuple(names), mean, scale, spec, w, hyper.threshold)


def train_detector(samples: Features, labels, hyper: DetectorHyper = DetectorHyper(), s_w: int | None = None) -> DetectorModel:
    """Fit both branches on feature rows; ``labels`` are 1 for abnormal uploads.

    Classes are balanced by cycling the minority rows. ``s_w`` pins the
    upload dimension the detector will accept.
    """
    y = np.asarray(labels, dtype=int)
    if len(np.unique(y)) < 2:
        raise ValueError("detector training needs both benign and abnormal samples")
    if len(y) != len(samples.dense) or len(y) != len(samples.block):
        raise ValueError("feature rows and labels differ in length")
    dense = _fit_branch(samples.dense, y, DENSE_NAMES, hyper, salt=1)
    block = _fit_branch(samples.block, y, BLOCK_NAMES, hyper, salt=2)
    return DetectorModel(dense, block, s_w, hyper.block_size, hyper.block_depth, hyper.combiner)


def detect(model: DetectorModel, window: ObservationWindow, prev_global: np.ndarray) -> np.ndarray:
    """Benign mask (True = benign) for every client in the window."""
    if model.s_w is not None and window.s_w != model.s_w:
        raise ValueError(f"detector was trained on uploads of size {model.s_w}, got {window.s_w}")
    feats = featurize(window, prev_global, model.block_size, model.block_depth)
    return model.classify(feats)


def stack_features(parts: list[Features]) -> Features:
    raw = {k: np.concatenate([p.raw[k] for p in parts]) for k in parts[0].raw}
    return Features(raw, np.vstack([p.dense for p in parts]), np.vstack([p.block for p in parts]))
