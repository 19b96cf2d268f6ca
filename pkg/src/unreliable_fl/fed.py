"""Federated training loop: local tau-step descent, weighted aggregation, rounds.

All clients take part in every round. A round broadcasts the global model,
runs ``local_train`` on every shard, passes each upload through the
corruption model, lets the defense policy combine the uploads, and records
the resulting global model.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import nn
from .data import Dataset
from .nn import ModelSpec
from .rng import stream
from .unreliable import CorruptionConfig, maybe_corrupt


@dataclass(frozen=True)
class FedConfig:
    m: int
    total_iterations: int
    local_epochs: int
    eta: float
    model: ModelSpec
    seed: int = 0
    projection_theta: float | None = None
    batch_size: int | None = None
    record_uploads: bool = False
    eval_every: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.total_iterations < 1 or self.total_iterations % self.local_epochs:
            raise ValueError(
                f"total_iterations={self.total_iterations} is not a positive multiple "
                f"of local_epochs={self.local_epochs}"
            )
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.projection_theta is not None and not self.projection_theta > 0:
            raise ValueError("projection_theta must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @property
    def rounds(self) -> int:
        return self.total_iterations // self.local_epochs


@dataclass
class RoundRecord:
    k: int
    global_params: np.ndarray
    corrupted: np.ndarray
    loss: float  # nan on rounds skipped by eval_every
    accuracy: float | None = None
    mask: np.ndarray | None = None
    uploads: np.ndarray | None = None


@dataclass
class TrainingTrace:
    config: FedConfig
    initial: np.ndarray
    weights: np.ndarray
    rounds: list[RoundRecord] = field(default_factory=list)

    def global_at(self, k: int) -> np.ndarray:
        """Global model after aggregation ``k``; ``k = 0`` is the initial model."""
        return self.initial if k == 0 else self.rounds[k - 1].global_params

    def globals(self) -> np.ndarray:
        return np.vstack([self.initial] + [r.global_params for r in self.rounds])

    @property
    def final(self) -> np.ndarray:
        return self.global_at(len(self.rounds))

    def corrupted_flags(self) -> np.ndarray:
        return np.vstack([r.corrupted for r in self.rounds])

    @property
    def any_corrupted(self) -> bool:
        return bool(any(r.corrupted.any() for r in self.rounds))


@dataclass
class RoundContext:
    """What the server sees when combining the uploads of round ``k``."""

    k: int
    spec: ModelSpec
    prev_global: np.ndarray
    history: list[np.ndarray]  # upload matrices, newest first
    corrupted: np.ndarray  # ground truth, read only by oracle policies


class DefensePolicy(Protocol):
    name: str
    depth: int

    def combine(self, uploads: np.ndarray, weights: np.ndarray, ctx: RoundContext) -> tuple[np.ndarray, np.ndarray | None]:
        ...


def _check_weights(weights, n):
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValueError(f"{weights.shape[0]} weights for {n} models")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1 (sum={weights.sum()!r})")
    return weights


def aggregate(models: Sequence[np.ndarray] | np.ndarray, weights: Sequence[float]) -> np.ndarray:
    models = np.asarray(models, dtype=float)
    weights = _check_weights(weights, len(models))
    return weights @ models if len(models) > 1 else weights[0] * models[0]


class FedAvg:
    name = "none"
    depth = 1

    def combine(self, uploads, weights, ctx):
        return aggregate(uploads, weights), None


def shard_weights(shards: Sequence[Dataset]) -> np.ndarray:
    sizes = np.array([len(s) for s in shards], dtype=float)
    return sizes / sizes.sum()


def global_loss(spec: ModelSpec, w: np.ndarray, shards: Sequence[Dataset], weights=None) -> float:
    if not shards:
        raise ValueError("no shards")
    weights = shard_weights(shards) if weights is None else np.asarray(weights)
    return float(sum(p * nn.loss(spec, w, s) for p, s in zip(weights, shards)))


def global_grad(spec: ModelSpec, w: np.ndarray, shards: Sequence[Dataset], weights=None) -> np.ndarray:
    weights = shard_weights(shards) if weights is None else np.asarray(weights)
    return sum(p * nn.loss_and_grad(spec, w, s)[1] for p, s in zip(weights, shards))


def local_train(
    spec: ModelSpec,
    w0: np.ndarray,
    shard: Dataset,
    tau: int,
    eta: float,
    rng: np.random.Generator | None = None,
    batch_size: int | None = None,
    theta: float | None = None,
) -> np.ndarray:
    """``tau`` gradient steps from ``w0``; full batch unless ``batch_size`` is set."""
    if len(shard) == 0:
        raise ValueError("empty shard")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    minibatch = batch_size is not None and batch_size < len(shard)
    if minibatch and rng is None:
        raise ValueError("mini-batch training needs an rng")
    w = w0
    for _ in range(tau):
        batch = shard
        if minibatch:
            batch = shard.subset(rng.choice(len(shard), size=batch_size, replace=False))
        w = nn.sgd_step(w, nn.loss_and_grad(spec, w, batch)[1], eta)
        if theta is not None:
            w = nn.project_ball(w, theta)
    return w


def run_federated(
    cfg: FedConfig,
    corruption: CorruptionConfig,
    defense: DefensePolicy | None,
    shards: Sequence[Dataset],
    test: Dataset | None = None,
    w0: np.ndarray | None = None,
) -> TrainingTrace:
    if len(shards) != cfg.m:
        raise ValueError(f"config has m={cfg.m} but {len(shards)} shards were given")
    spec = cfg.model
    for s in shards:
        if len(s) == 0 or s.dim != spec.layer_sizes[0]:
            raise ValueError(f"shard {s.name!r} does not match the model input size")
    defense = defense or FedAvg()
    weights = shard_weights(shards)
    probs = corruption.client_probabilities(cfg.m)
    w = nn.init_params(spec, cfg.seed) if w0 is None else np.asarray(w0, dtype=float)
    trace = TrainingTrace(cfg, w, weights)
    history: deque[np.ndarray] = deque(maxlen=max(1, defense.depth))

    for k in range(1, cfg.rounds + 1):
        uploads = np.empty((cfg.m, spec.n_params))
        flags = np.zeros(cfg.m, dtype=bool)
        for i, shard in enumerate(shards):
            local = local_train(
                spec, w, shard, cfg.local_epochs, cfg.eta,
                rng=stream(cfg.seed, i, k, "batch"),
                batch_size=cfg.batch_size,
                theta=cfg.projection_theta,
            )
            uploads[i], flags[i] = maybe_corrupt(local, corruption, stream(corruption.seed, i, k, "corrupt"), probs[i])
        history.appendleft(uploads)
        ctx = RoundContext(k, spec, w, list(history), flags)
        new, mask = defense.combine(uploads, weights, ctx)
        if cfg.projection_theta is not None:
            new = nn.project_ball(new, cfg.projection_theta)
        evaluate = k % cfg.eval_every == 0 or k == cfg.rounds
        trace.rounds.append(
            RoundRecord(
                k=k,
                global_params=new,
                corrupted=flags,
                loss=global_loss(spec, new, shards, weights) if evaluate else float("nan"),
                accuracy=nn.accuracy(spec, new, test) if evaluate and test is not None and spec.task == "classification" else None,
                mask=None if mask is None else np.asarray(mask, dtype=bool),
                uploads=uploads if cfg.record_uploads else None,
            )
        )
        w = new
    return trace


def centralized_train(
    spec: ModelSpec,
    dataset,
    steps: int,
    eta: float,
    w0: np.ndarray | None = None,
    seed: int = 0,
    tol: float | None = 1e-6,
    theta: float | None = None,
) -> np.ndarray:
    """Full-batch gradient descent; rows of the result are the iterates.

    Stops early once the gradient norm falls below ``tol``; the last row is
    then the reference optimum.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    w = nn.init_params(spec, seed) if w0 is None else np.asarray(w0, dtype=float)
    traj = [w]
    for _ in range(steps):
        g = nn.loss_and_grad(spec, w, dataset)[1]
        if tol is not None and np.linalg.norm(g) < tol:
            break
        w = nn.sgd_step(w, g, eta)
        if theta is not None:
            w = nn.project_ball(w, theta)
        traj.append(w)
    return np.vstack(traj)


def find_optimum(spec: ModelSpec, dataset, eta: float, w0=None, tol: float = 1e-6, max_steps: int = 200_000) -> np.ndarray:
    """Gradient descent run to ``||grad F|| < tol``; raises if the budget runs out."""
    w = np.zeros(spec.n_params) if w0 is None else np.asarray(w0, dtype=float)
    for _ in range(max_steps):
        g = nn.loss_and_grad(spec, w, dataset)[1]
        if np.linalg.norm(g) < tol:
            return w
        w = w - eta * g
    raise RuntimeError(f"no convergence to gradient norm {tol} in {max_steps} steps")


def interval_gap(trace: TrainingTrace, k: int, shards: Sequence[Dataset]) -> float:
    """``F(w^(k tau)) - F(v^(k tau))`` for the centralized run restarted at ``w^((k-1) tau)``."""
    cfg = trace.config
    if not 1 <= k <= len(trace.rounds):
        raise ValueError(f"k must lie in 1..{len(trace.rounds)}")
    if trace.any_corrupted:
        raise ValueError("interval gap is only defined for traces without corrupted uploads")
    spec = cfg.model
    v = trace.global_at(k - 1)
    for _ in range(cfg.local_epochs):
        v = nn.sgd_step(v, global_grad(spec, v, shards, trace.weights), cfg.eta)
        if cfg.projection_theta is not None:
            v = nn.project_ball(v, cfg.projection_theta)
    return global_loss(spec, trace.global_at(k), shards, trace.weights) - global_loss(spec, v, shards, trace.weights)
