"""Scale-and-noise corruption of client uploads.

An unreliable upload is ``alpha * w + n`` with ``n ~ N(0, sigma^2 I)``. Each
upload is corrupted with probability p_U; the benign branch has probability
``1 - p_U``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("per-round", "fixed-subset", "grouped")

# (alpha, sigma) of the three evaluation cases
CASES = {
    "case1": (-1.0, 0.1),
    "case2": (0.8, 0.5),
    "case3": (0.5, 0.3),
}


@dataclass(frozen=True)
class CorruptionConfig:
    alpha: float = 1.0
    sigma: float = 0.0
    p_u: float = 0.0
    seed: int = 0
    mode: str = "per-round"
    group_p: tuple[float, ...] = ()

    def __post_init__(self):
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not 0.0 <= self.p_u <= 1.0:
            raise ValueError(f"p_u must lie in [0, 1], got {self.p_u}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "group_p", tuple(float(p) for p in self.group_p))
        if self.mode == "grouped" and not self.group_p:
            raise ValueError("grouped mode needs group_p")
        if any(not 0.0 <= p <= 1.0 for p in self.group_p):
            raise ValueError("group probabilities must lie in [0, 1]")

    @classmethod
    def case(cls, name: str, p_u: float, seed: int = 0, **kw) -> "CorruptionConfig":
        alpha, sigma = CASES[name]
        return cls(alpha=alpha, sigma=sigma, p_u=p_u, seed=seed, **kw)

    def client_probabilities(self, m: int) -> np.ndarray:
        """Per-client probability of corrupting a given upload.

        ``fixed-subset`` marks ``round(p_u * m)`` clients, chosen once from the
        seed, as always unreliable. ``grouped`` splits clients into
        ``len(group_p)`` contiguous equal-size groups.
        """
        if self.mode == "per-round":
            return np.full(m, self.p_u)
        if self.mode == "fixed-subset":
            n_bad = int(round(self.p_u * m))
            bad = np.random.default_rng([self.seed & 0xFFFFFFFF, 7]).permutation(m)[:n_bad]
            p = np.zeros(m)
            p[bad] = 1.0
            return p
        groups = np.array_split(np.arange(m), len(self.group_p))
        p = np.zeros(m)
        for g, pg in zip(groups, self.group_p):
            p[g] = pg
        return p


def corrupt(w: np.ndarray, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    out = alpha * w
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=w.shape)
    return out


def maybe_corrupt(
    w: np.ndarray, cfg: CorruptionConfig, rng: np.random.Generator, p: float | None = None
) -> tuple[np.ndarray, bool]:
    """Corrupt ``w`` with probability ``p`` (default ``cfg.p_u``).

    The uniform draw deciding the branch is always taken first, so two
    configurations differing only in p_U see the same draws.
    """
    p = cfg.p_u if p is None else p
    hit = bool(rng.random() < p)
    if hit:
        return corrupt(w, cfg.alpha, cfg.sigma, rng), True
    return w, False
