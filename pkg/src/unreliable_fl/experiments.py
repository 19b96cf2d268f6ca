"""Desk-scale recipes shared by the harness, the scripts and the acceptance suite.

MNIST runs use a 4000/1000 subset shipped under ``data/mnist5k``. The first
``n_train`` training rows are the federated data; the remaining rows are a
server-side public set used for detector pre-training and score validation.
Images are 2x2 average-pooled to 14x14 by default to keep runs short on one
core.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bound, data, fed, nn
from .defense import DetectorHyper, DetectorModel, FeatureRecorder, OracleDeepSA, stack_features, train_detector
from .unreliable import CASES, CorruptionConfig

MNIST_ENV = "UFL_MNIST_DIR"


def default_mnist_dir() -> Path:
    env = os.environ.get(MNIST_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "mnist5k"


@dataclass(frozen=True)
class Bundle:
    """Federated training data, test data and the server's public data."""

    train: data.Dataset
    test: data.Dataset | None
    public: data.Dataset


def mnist_bundle(root=None, n_train: int = 2000, n_test: int = 1000, pool: int = 2) -> Bundle:
    train, test = data.load_mnist_dir(root or default_mnist_dir())
    if n_train >= len(train):
        raise ValueError(f"n_train={n_train} leaves no public rows out of {len(train)}")
    if pool > 1:
        train, test = data.pool_images(train, pool), data.pool_images(test, pool)
    public = train.subset(np.arange(n_train, len(train)), name="mnist-public")
    return Bundle(train.head(n_train), test.head(n_test), public)


def synthetic_bundle(seed: int, n: int = 2000, dim: int = 10, noise: float = 0.1, n_test: int = 1000) -> Bundle:
    """One draw split into n training rows, ``n_test`` test rows and n public rows."""
    full = data.gen_synthetic_logreg(2 * n + n_test, dim, seed, noise=noise)
    idx = np.arange(len(full))
    return Bundle(full.subset(idx[:n]), full.subset(idx[n : n + n_test]), full.subset(idx[n + n_test :]))


def logistic_beta(d: data.Dataset) -> float:
    """Smoothness of mean logistic loss: lambda_max(X~^T X~ / n) / 4 with a bias column."""
    X = np.column_stack([d.features, np.ones(len(d))])
    return float(np.linalg.eigvalsh(X.T @ X / len(d))[-1] / 4.0)


def param_rms(spec: nn.ModelSpec, seed: int = 0) -> float:
    """Root-mean-square of a freshly initialised parameter vector."""
    w = nn.init_params(spec, seed)
    return float(np.sqrt(np.mean(w * w)))


def final_losses(bundle: Bundle, spec, taus, seeds, eta, corruption, m: int, t: int, batch_size=None) -> np.ndarray:
    """Final global loss per (seed, tau); ``corruption(seed)`` gives the corruption config."""
    out = np.empty((len(seeds), len(taus)))
    for a, seed in enumerate(seeds):
        shards = data.split_iid(bundle.train, m, seed).shards(bundle.train)
        for b, tau in enumerate(taus):
            cfg = fed.FedConfig(m, t, tau, eta, spec, seed=seed, batch_size=batch_size, eval_every=t)
            out[a, b] = fed.run_federated(cfg, corruption(seed), None, shards).rounds[-1].loss
    return out


@dataclass(frozen=True)
class SoundnessResult:
    seed: int
    p_u: float
    gap: float
    bound: bound.BoundResult
    constants: bound.AssumptionConstants

    @property
    def holds(self) -> bool | None:
        """None when the bound diverged and so makes no claim."""
        return None if self.bound.diverged else self.gap <= self.bound.value


def soundness_run(
    seed: int,
    p_u: float,
    m: int = 10,
    t: int = 60,
    tau: int = 1,
    eta_scale: float = 1.0,
    case: str = "case3",
    n: int = 2000,
    dim: int = 10,
) -> SoundnessResult:
    """One bound-versus-gap comparison on synthetic logistic regression.

    Constants are estimated on the reliable trajectory of the same seed; the
    corrupted run then reuses them with the corruption parameters plugged in.
    """
    d = data.gen_synthetic_logreg(n, dim, seed)
    spec = nn.ModelSpec.logistic(dim)
    shards = data.split_iid(d, m, seed).shards(d)
    # every F_i must be 1/eta-smooth, so take the stiffest shard
    eta = eta_scale / max(logistic_beta(s) for s in shards)
    w_star = fed.find_optimum(spec, d, eta, tol=1e-9)
    f_star = nn.loss(spec, w_star, d)
    cfg = fed.FedConfig(m, t, tau, eta, spec, seed=seed)
    clean = fed.run_federated(cfg, CorruptionConfig(), None, shards)
    consts = bound.estimate_constants(spec, shards, clean, w_star, seed=seed)
    alpha, sigma = CASES[case]
    corruption = CorruptionConfig(alpha=alpha, sigma=sigma, p_u=p_u, seed=seed)
    trace = clean if p_u == 0 else fed.run_federated(cfg, corruption, None, shards)
    gap = fed.global_loss(spec, trace.final, shards) - f_star
    inp = bound.BoundInput(consts, m, t, tau, alpha=alpha, sigma=sigma, p_u=p_u)
    return SoundnessResult(seed, p_u, float(gap), bound.theorem1_bound(inp), consts)


# detector pre-training grid: (alpha, sigma relative to the parameter rms)
PILOT_GRID = tuple((a, s) for a in (-1.0, 0.5, 0.8) for s in (0.03, 0.1, 0.3, 1.0, 3.0))


def pilot_detector(
    public: data.Dataset,
    spec: nn.ModelSpec,
    m: int = 50,
    t: int = 120,
    tau: int = 4,
    eta: float = 1.0,
    p_u: float = 0.2,
    grid=PILOT_GRID,
    seed: int = 1000,
    depth: int = 2,
    hyper: DetectorHyper = DetectorHyper(),
) -> DetectorModel:
    """Train a detector on oracle-filtered pilot runs over the public set.

    Every grid cell runs once with its own seed; the oracle policy keeps the
    pilot trajectory clean while the recorder labels each upload.
    """
    scale = param_rms(spec)
    parts, labels = [], []
    for j, (alpha, sigma_rel) in enumerate(grid):
        run_seed = seed + j
        shards = data.split_iid(public, m, run_seed).shards(public)
        rec = FeatureRecorder(OracleDeepSA(), depth, hyper.block_size, hyper.block_depth)
        cfg = fed.FedConfig(m, t, tau, eta, spec, seed=run_seed, eval_every=t)
        corruption = CorruptionConfig(alpha=alpha, sigma=sigma_rel * scale, p_u=p_u, seed=run_seed)
        fed.run_federated(cfg, corruption, rec, shards)
        parts.extend(rec.features)
        labels.extend(rec.labels)
    model = train_detector(stack_features(parts), np.concatenate(labels), hyper, s_w=spec.n_params)
    model.info.update({"pilot_rows": int(sum(len(x) for x in labels)), "grid": [list(g) for g in grid], "seed": seed})
    return model


@dataclass(frozen=True)
class DivergenceResult:
    bound: bound.BoundResult
    clean_loss: np.ndarray
    corrupted_loss: np.ndarray
    corrupted_first_round: int


def divergence_run(
    seed: int, sigma: float = 1e3, alpha: float = 0.8, p_u: float = 0.1, m: int = 50, t: int = 60, n: int = 2000, dim: int = 10
) -> DivergenceResult:
    """Heavy-noise run on the convex task next to its reliable twin.

    Both runs share data, split, initialisation and step size; the bound uses
    constants estimated on the reliable run.
    """
    d = data.gen_synthetic_logreg(n, dim, seed)
    spec = nn.ModelSpec.logistic(dim)
    eta = 1.0 / logistic_beta(d)
    shards = data.split_iid(d, m, seed).shards(d)
    cfg = fed.FedConfig(m, t, 1, eta, spec, seed=seed)
    clean = fed.run_federated(cfg, CorruptionConfig(), None, shards)
    w_star = fed.find_optimum(spec, d, eta, tol=1e-9)
    consts = bound.estimate_constants(spec, shards, clean, w_star, seed=seed)
    bad = fed.run_federated(cfg, CorruptionConfig(alpha=alpha, sigma=sigma, p_u=p_u, seed=seed), None, shards)
    result = bound.theorem1_bound(bound.BoundInput(consts, m, t, 1, alpha, sigma, p_u))
    return DivergenceResult(
        result,
        np.array([r.loss for r in clean.rounds]),
        np.array([r.loss for r in bad.rounds]),
        int(bad.rounds[0].corrupted.sum()),
    )
