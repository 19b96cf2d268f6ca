from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class ObservationWindow:
    """Recent uploads per client, shape ``(u, d, s_w)``, newest column first."""

    entries: np.ndarray

    @property
    def u(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    @property
    def s_w(self) -> int:
        return self.entries.shape[2]

    def newest(self) -> np.ndarray:
        return self.entries[:, 0, :]

    def permuted(self, order) -> "ObservationWindow":
        return ObservationWindow(self.entries[np.asarray(order)])


def build_observation(history: Sequence[np.ndarray], d: int, k: int | None = None) -> ObservationWindow:
    """Window over rounds ``k, k-1, ..., k-d+1`` of ``history``.

    ``history[j]`` holds the ``(u, s_w)`` uploads of round ``j + 1``. Rounds
    before the first are padded by repeating the oldest available one.
    """
    if not len(history):
        raise ValueError("empty upload history")
    if d < 1:
        raise ValueError(f"window depth must be >= 1, got {d}")
    k = len(history) if k is None else k
    if not 1 <= k <= len(history):
        raise ValueError(f"round {k} outside the recorded history of {len(history)} rounds")
    cols = [history[max(k - 1 - j, 0)] for j in range(d)]
    return ObservationWindow(np.stack(cols, axis=1))
