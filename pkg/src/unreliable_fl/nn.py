"""Small trainable models with exact gradients over flat parameter vectors.

Three families share one interface:

* ``mlp``: fully connected network. ``layer_sizes=(d, 1)`` with a sigmoid
  output is plain logistic regression (convex); hidden layers use relu.
* ``quadratic``: ``F(w) = mean_j 0.5 * ||w - x_j||^2`` over batch rows, a
  convex reference objective with smoothness exactly 1.

Parameter layout is layer-major: for each layer the weight matrix
(fan_in x fan_out, row-major) followed by its bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

OUTPUTS = ("sigmoid", "softmax", "identity")


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...]
    output: str = "sigmoid"
    hidden_activation: str = "relu"
    task: str = "classification"
    kind: str = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.kind not in ("mlp", "quadratic"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "mlp" and len(self.layer_sizes) < 2:
            raise ValueError("an mlp needs at least input and output sizes")
        if not self.layer_sizes or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")

    @classmethod
    def logistic(cls, dim: int) -> "ModelSpec":
        return cls((dim, 1), output="sigmoid")

    @classmethod
    def mlp(cls, dim: int, n_classes: int, hidden: int = 128) -> "ModelSpec":
        return cls((dim, hidden, n_classes), output="softmax")

    @classmethod
    def quadratic(cls, dim: int) -> "ModelSpec":
        return cls((dim,), output="identity", task="regression", kind="quadratic")

    @property
    def n_params(self) -> int:
        if self.kind == "quadratic":
            return self.layer_sizes[0]
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    @property
    def is_convex(self) -> bool:
        """True for the families whose loss is convex in the parameters."""
        return self.kind == "quadratic" or len(self.layer_sizes) == 2

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "output": self.output,
            "hidden_activation": self.hidden_activation,
            "task": self.task,
            "kind": self.kind,
        }


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray


def unpack(spec: ModelSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (weight, bias) per layer into the flat vector ``w``."""
    layers = []
    pos = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = w[pos : pos + a * b].reshape(a, b)
        pos += a * b
        layers.append((W, w[pos : pos + b]))
        pos += b
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if spec.kind == "quadratic":
        return rng.uniform(-1.0, 1.0, size=spec.n_params)
    parts = []
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(rng.uniform(-bound, bound, size=b))
    return np.concatenate(parts)


def _check(spec: ModelSpec, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> None:
    if w.shape != (spec.n_params,):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({spec.n_params},)")
    if X.ndim != 2 or X.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"features have shape {X.shape}, expected (n, {spec.layer_sizes[0]})")
    if len(X) != len(y) or len(X) == 0:
        raise ValueError(f"batch has {len(X)} feature rows and {len(y)} labels")


def _forward(spec, layers, X):
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    return acts, h @ W + b


def _targets(spec, y, n_out):
    if spec.output == "softmax" or (spec.output == "sigmoid" and n_out > 1):
        onehot = np.zeros((len(y), n_out))
        onehot[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
        return onehot
    return np.asarray(y, dtype=float).reshape(len(y), n_out)


def _loss_and_dlogits(spec, z, t):
    n = len(z)
    if spec.output == "sigmoid":
        # softplus(z) - t*z is the stable form of binary cross-entropy
        loss = np.sum(np.logaddexp(0.0, z) - t * z) / n
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return loss, (p - t) / n
    if spec.output == "softmax":
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
        loss = np.sum(lse - np.sum(t * z, axis=1, keepdims=True)) / n
        return loss, (np.exp(z - lse) - t) / n
    r = z - t
    return 0.5 * np.sum(r * r) / n, r / n


def loss_and_grad(spec: ModelSpec, w: np.ndarray, batch) -> tuple[float, np.ndarray]:
    """Mean loss over ``batch`` and its exact gradient with respect to ``w``."""
    X = np.asarray(batch.features, dtype=float)
    y = np.asarray(batch.labels)
    _check(spec, w, X, y)
    if spec.kind == "quadratic":
        r = w[None, :] - X
        return 0.5 * float(np.sum(r * r)) / len(X), r.mean(axis=0)

    layers = unpack(spec, w)
    acts, z = _forward(spec, layers, X)
    loss, delta = _loss_and_dlogits(spec, z, _targets(spec, y, z.shape[1]))

    grads = []
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        a = acts[idx]
        grads.append(delta.sum(axis=0))
        grads.append((a.T @ delta).ravel())
        if idx > 0:
            delta = (delta @ W.T) * (a > 0)
    return float(loss), np.concatenate(grads[::-1])


def loss(spec: ModelSpec, w: np.ndarray, batch) -> float:
    X = np.asarray(batch.features, dtype=float)
    y = np.asarray(batch.labels)
    _check(spec, w, X, y)
    if spec.kind == "quadratic":
        r = w[None, :] - X
        return 0.5 * float(np.sum(r * r)) / len(X)
    _, z = _forward(spec, unpack(spec, w), X)
    return float(_loss_and_dlogits(spec, z, _targets(spec, y, z.shape[1]))[0])


def predict(spec: ModelSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class predictions for classification specs, raw outputs otherwise."""
    _, z = _forward(spec, unpack(spec, w), np.asarray(X, dtype=float))
    if spec.task == "regression":
        return z[:, 0] if z.shape[1] == 1 else z
    if z.shape[1] == 1:
        return (z[:, 0] > 0).astype(int)
    return np.argmax(z, axis=1)


def accuracy(spec: ModelSpec, w: np.ndarray, batch) -> float:
    if not np.all(np.isfinite(w)):
        # a diverged model predicts nothing useful; argmax over nan is class 0
        return 0.0
    pred = predict(spec, w, batch.features)
    return float(np.mean(pred == np.asarray(batch.labels)))


def sgd_step(w: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch {w.shape} vs {g.shape}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
        raise ValueError("non-finite parameters or gradient")
    return w - eta * g


def project_ball(w: np.ndarray, theta: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``theta``."""
    norm = float(np.linalg.norm(w))
    if norm <= theta:
        return w
    out = w * (theta / norm)
    # rounding can leave the scaled norm a hair above theta
    while np.linalg.norm(out) > theta:
        out = np.nextafter(out, 0.0)
    return out
