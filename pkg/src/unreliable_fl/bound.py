"""Convergence bound for federated descent with unreliable uploads.

The bound on ``E F(w_T) - F(w*)`` is

    1 / ( T * ( omega*eta*(1 - beta*eta/2) - rho*Delta/(tau*eps^2) ) )

with ``Delta = phi(tau) + offset``,
``phi(tau) = (delta/beta) * ((eta*beta + 1)^tau - 1) - eta*delta*tau`` and the
unreliability offset ``(p_U/M) * ((1 - alpha)*M*Theta + 2*sqrt(M)*sigma/pi)``.
When the bracket is not positive the bound carries no information and
``theorem1_bound`` returns a diverged result instead of a number.

The offset's noise term is used exactly as written even though the expected
norm of a sum of M isotropic Gaussian vectors exceeds ``2*sqrt(M)*sigma/pi``
(already in one dimension it is ``sigma*sqrt(2M/pi)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from .data import Dataset
from .fed import TrainingTrace, global_grad, global_loss
from .rng import stream


@dataclass(frozen=True)
class AssumptionConstants:
    rho: float
    beta: float
    delta: float
    theta: float
    epsilon: float
    omega: float
    eta: float

    def __post_init__(self):
        for name in ("rho", "beta", "theta", "epsilon", "omega", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.delta < 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")

    @property
    def step_ok(self) -> bool:
        """Whether eta <= 1/beta holds."""
        return self.eta * self.beta <= 1.0


@dataclass(frozen=True)
class BoundInput:
    constants: AssumptionConstants
    m: int
    total_iterations: int
    tau: int
    alpha: float = 1.0
    sigma: float = 0.0
    p_u: float = 0.0

    def __post_init__(self):
        if self.tau < 1 or self.total_iterations % self.tau:
            raise ValueError(f"T={self.total_iterations} is not a multiple of tau={self.tau}")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass(frozen=True)
class BoundResult:
    denominator: float
    value: float | None

    @property
    def diverged(self) -> bool:
        return self.value is None

    def __str__(self):
        return "diverged" if self.diverged else repr(self.value)


def phi(tau: float, delta: float, beta: float, eta: float) -> float:
    # expm1/log1p keep phi(1) at exactly zero and avoid cancellation for small eta*beta
    growth = math.expm1(tau * math.log1p(eta * beta))
    if tau == 1:
        return 0.0
    return (delta / beta) * growth - eta * delta * tau


def noise_offset(p_u: float, alpha: float, theta: float, m: int, sigma: float) -> float:
    return (p_u / m) * ((1.0 - alpha) * m * theta + 2.0 * math.sqrt(m) * sigma / math.pi)


def theorem1_bound(inp: BoundInput) -> BoundResult:
    c = inp.constants
    big_delta = phi(inp.tau, c.delta, c.beta, c.eta) + noise_offset(inp.p_u, inp.alpha, c.theta, inp.m, inp.sigma)
    drift = 0.0 if big_delta == 0 else c.rho * big_delta / (inp.tau * c.epsilon**2)
    bracket = c.omega * c.eta * (1.0 - c.beta * c.eta / 2.0) - drift
    denom = inp.total_iterations * bracket
    if not denom > 0:
        return BoundResult(denom, None)
    return BoundResult(denom, 1.0 / denom)


def h_value(tau: float, c: AssumptionConstants, offset: float) -> float:
    """``(phi(tau) + offset) / tau`` with tau treated as continuous."""
    return (phi(tau, c.delta, c.beta, c.eta) + offset) / tau


def h_second_derivative(tau: float, c: AssumptionConstants, offset: float) -> float:
    x = c.eta * c.beta + 1.0
    g = x**tau
    lg = tau * math.log(x)
    core = g * ((lg - 1.0) ** 2 + 1.0) - 2.0
    return c.delta / (c.beta * tau**3) * core + 2.0 * offset / tau**3


def divisors(t: int) -> list[int]:
    small = [d for d in range(1, int(math.isqrt(t)) + 1) if t % d == 0]
    return sorted(set(small + [t // d for d in small]))


def optimal_tau(inp: BoundInput) -> tuple[int | None, BoundResult | None]:
    """Divisor of T minimising the bound (``inp.tau`` is ignored).

    Ties go to the smaller tau. Returns ``(None, None)`` when every
    candidate diverges.
    """
    best = (None, None)
    for tau in divisors(inp.total_iterations):
        res = theorem1_bound(replace(inp, tau=tau))
        if res.diverged:
            continue
        if best[1] is None or res.value < best[1].value:
            best = (tau, res)
    return best


def _sample_points(path: np.ndarray, w_star: np.ndarray, n_points: int, rng) -> np.ndarray:
    """Points on segments between consecutive path points and toward w*."""
    anchors = np.vstack([path, w_star[None, :]])
    pts = [anchors]
    for _ in range(n_points):
        i = rng.integers(len(anchors))
        j = rng.integers(len(anchors))
        t = rng.random()
        pts.append(((1 - t) * anchors[i] + t * anchors[j])[None, :])
    return np.vstack(pts)


def _max_curvature(spec, w, shard, rng, iters: int = 12, h: float = 1e-4) -> float:
    """Power iteration on finite-difference Hessian-vector products at ``w``."""
    g0 = nn.loss_and_grad(spec, w, shard)[1]
    v = rng.normal(size=w.shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = (nn.loss_and_grad(spec, w + h * v, shard)[1] - g0) / h
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            break
        v = hv / lam
    return lam


def estimate_constants(
    spec,
    shards: Sequence[Dataset],
    trace: TrainingTrace,
    w_star: np.ndarray,
    n_points: int = 24,
    seed: int = 0,
    theta_margin: float = 1.1,
) -> AssumptionConstants:
    """Empirical constants from sampled points along and near the trajectory.

    * rho: largest ``||grad F_i||`` and largest loss-difference ratio over
      sampled pairs;
    * beta: largest power-iterated curvature over sampled points;
    * delta: shard-weighted mean of ``max_w ||grad F_i(w) - grad F(w)||``;
    * Theta: ``theta_margin`` times the largest observed parameter norm;
    * epsilon: smallest optimality gap over the recorded global models;
    * omega: ``min_k 1/||w^(k tau) - w*||^2`` over aggregation points,
      including the initial model.

    ``eta > 1/beta`` is reported through ``AssumptionConstants.step_ok``,
    not raised.
    """
    if not spec.is_convex:
        raise ValueError("constant estimation assumes a convex model family")
    rng = stream(seed, purpose="estimate")
    path = trace.globals()
    weights = trace.weights
    pts = _sample_points(path, w_star, n_points, rng)

    grads = np.array([[nn.loss_and_grad(spec, w, s)[1] for s in shards] for w in pts])  # (n_pts, M, P)
    losses = np.array([[nn.loss(spec, w, s) for s in shards] for w in pts])
    rho = float(np.max(np.linalg.norm(grads, axis=2)))
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            dist = np.linalg.norm(pts[a] - pts[b])
            if dist > 1e-12:
                rho = max(rho, float(np.max(np.abs(losses[a] - losses[b])) / dist))

    full = np.einsum("i,nip->np", weights, grads)
    div = np.linalg.norm(grads - full[:, None, :], axis=2)  # (n_pts, M)
    delta = float(weights @ div.max(axis=0))

    beta = 0.0
    for w in pts[:: max(1, len(pts) // 8)]:
        for s in shards:
            beta = max(beta, _max_curvature(spec, w, s, rng))

    observed = [path]
    if trace.rounds and trace.rounds[0].uploads is not None:
        observed += [r.uploads for r in trace.rounds]
    theta = theta_margin * max(float(np.max(np.linalg.norm(np.vstack(observed), axis=1))), float(np.linalg.norm(w_star)))

    f_star = global_loss(spec, w_star, shards, weights)
    gaps = [global_loss(spec, r.global_params, shards, weights) - f_star for r in trace.rounds]
    epsilon = max(min(gaps), np.finfo(float).tiny)
    dist2 = np.sum((path - w_star) ** 2, axis=1)
    omega = 1.0 / float(np.max(dist2))

    return AssumptionConstants(
        rho=rho, beta=beta, delta=delta, theta=theta, epsilon=epsilon, omega=omega, eta=trace.config.eta
    )


def empirical_gap(spec, shards, trace: TrainingTrace, w_star: np.ndarray) -> float:
    return global_loss(spec, trace.final, shards, trace.weights) - global_loss(spec, w_star, shards, trace.weights)


def gradient_norm(spec, shards, w) -> float:
    return float(np.linalg.norm(global_grad(spec, w, shards)))
