from __future__ import annotations

import numpy as np


def detection_metrics(masks, flags) -> tuple[float | None, float | None]:
    """(TPR, FPR) of abnormal-upload detection.

    ``masks`` are benign masks (True = judged benign), ``flags`` the true
    corruption flags; both may be any matching shape. A rate whose class is
    empty is ``None``.
    """
    masks = np.asarray(masks, dtype=bool)
    flags = np.asarray(flags, dtype=bool)
    if masks.shape != flags.shape:
        raise ValueError(f"mask shape {masks.shape} does not match flags {flags.shape}")
    flagged = ~masks
    n_bad = int(flags.sum())
    n_good = flags.size - n_bad
    tpr = float((flagged & flags).sum() / n_bad) if n_bad else None
    fpr = float((flagged & ~flags).sum() / n_good) if n_good else None
    return tpr, fpr
