"""Per-client features of an observation window.

Dense features describe scale and direction of each upload relative to the
broadcast model, the client's previous upload and the coordinate-wise median
of the round. Block features split each upload's residual against the median
into stride-``B`` sub-vectors and summarise them over the ``l`` newest
columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .window import ObservationWindow

RECIPE = "stats-v1"
RAW_NAMES = (
    "consec_cos",
    "global_cos",
    "norm_ratio",
    "median_norm_ratio",
    "update_ratio",
    "update_cos",
    "resid_var",
)
DENSE_NAMES = (
    "consec_cos",
    "global_cos_gap",
    "log_norm_ratio",
    "log_median_norm_ratio",
    "log_update_ratio",
    "update_cos",
    "log_resid_ratio",
)
BLOCK_NAMES = (
    "block_q_mean",
    "block_q_std",
    "block_q_max",
    "block_q_p90",
    "block_frac_high",
    "block_consec_cos",
    "block_frac_neg",
)
_TINY = 1e-300


@dataclass(frozen=True, eq=False)
class Features:
    raw: dict[str, np.ndarray]
    dense: np.ndarray  # (u, len(DENSE_NAMES))
    block: np.ndarray  # (u, len(BLOCK_NAMES))


def _cos(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dot = np.sum(a * b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = dot / (na * nb)
    # zero vectors carry no direction; treat them as aligned with themselves
    return np.where((na == 0) | (nb == 0), np.where(na == nb, 1.0, 0.0), np.clip(c, -1.0, 1.0))


def _safe_ratio(a, b):
    return (a + _TINY) / (b + _TINY)


def _blocks(x: np.ndarray, B: int) -> np.ndarray:
    """Zero-pad the last axis to a multiple of ``B`` and reshape to blocks."""
    pad = (-x.shape[-1]) % B
    if pad:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (pad,))], axis=-1)
    return x.reshape(x.shape[:-1] + (x.shape[-1] // B, B))


def featurize(window: ObservationWindow, prev_global: np.ndarray, block_size: int = 64, block_depth: int = 2) -> Features:
    if block_size < 1 or block_depth < 1:
        raise ValueError("block size and depth must be >= 1")
    w = window.entries
    cur = w[:, 0, :]
    prev = w[:, 1, :] if window.d > 1 else cur
    g = np.asarray(prev_global, dtype=float)
    med = np.median(cur, axis=0)

    norms = np.linalg.norm(cur, axis=1)
    upd = cur - g
    upd_norm = np.linalg.norm(upd, axis=1)
    resid = cur - med
    raw = {
        "consec_cos": _cos(cur, prev),
        "global_cos": _cos(cur, g[None, :]),
        "norm_ratio": _safe_ratio(norms, np.linalg.norm(prev, axis=1)),
        "median_norm_ratio": _safe_ratio(norms, np.median(norms)),
        "update_ratio": _safe_ratio(upd_norm, np.median(upd_norm)),
        "update_cos": _cos(upd, (med - g)[None, :]),
        "resid_var": np.mean(resid**2, axis=1),
    }
    resid_ratio = _safe_ratio(raw["resid_var"], np.median(raw["resid_var"]))
    dense = np.column_stack(
        [
            raw["consec_cos"],
            np.log10(1.0 - raw["global_cos"] + 1e-12),
            np.log(raw["norm_ratio"]),
            np.log(raw["median_norm_ratio"]),
            np.log(raw["update_ratio"]),
            raw["update_cos"],
            np.log(resid_ratio),
        ]
    )

    # block residual energy relative to the per-block median across clients
    energy = np.mean(_blocks(resid, block_size) ** 2, axis=-1)  # (u, n_blocks)
    q = np.log(_safe_ratio(energy, np.median(energy, axis=0)))
    l = min(block_depth, window.d)
    if l > 1:
        cb = _blocks(w[:, :l, :], block_size)  # (u, l, n_blocks, B)
        bc = _cos(cb[:, :-1], cb[:, 1:])  # (u, l-1, n_blocks)
        consec = bc.mean(axis=(1, 2))
        frac_neg = (bc < 0).mean(axis=(1, 2))
    else:
        consec = np.ones(window.u)
        frac_neg = np.zeros(window.u)
    block = np.column_stack(
        [
            q.mean(axis=1),
            q.std(axis=1),
            q.max(axis=1),
            np.percentile(q, 90, axis=1),
            (q > np.log(4.0)).mean(axis=1),
            consec,
            frac_neg,
        ]
    )
    return Features(raw, dense, block)
