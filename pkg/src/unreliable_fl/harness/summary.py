"""Replicate statistics per sweep cell and CSV/JSON emission."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

CELL_KEYS = ("config_id", "dataset", "model", "m", "t", "tau", "p_u", "alpha", "sigma", "defense")
METRICS = ("final_loss", "best_loss", "final_accuracy", "best_accuracy")
STATS = ("mean", "std", "min", "max")
INT_COLUMNS = {"m", "t", "tau", "n", "seed", "round"}
STR_COLUMNS = {"config_id", "dataset", "model", "defense"}


def summary_columns(by=CELL_KEYS) -> tuple[str, ...]:
    stats = tuple(f"{m}_{s}" for m in METRICS for s in STATS)
    return tuple(by) + ("n",) + stats + ("tpr", "fpr")


def _finite(values):
    return [v for v in values if v is not None and math.isfinite(v)]


def _stats(values) -> dict:
    v = np.array(_finite(values), dtype=float)
    if len(v) == 0:
        return dict.fromkeys(STATS)
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.min() < v.max() else 0.0,
        "min": float(v.min()),
        "max": float(v.max()),
    }


def _per_replicate(records: list[dict]) -> dict:
    records = sorted(records, key=lambda r: r["round"])
    losses = [r["loss"] for r in records]
    accs = [r["accuracy"] for r in records]
    fin_l, fin_a = _finite(losses), _finite(accs)
    return {
        "final_loss": records[-1]["loss"],
        "best_loss": min(fin_l) if fin_l else None,
        "final_accuracy": records[-1]["accuracy"],
        "best_accuracy": max(fin_a) if fin_a else None,
    }


def _pooled_rate(records, hit, total):
    hits = sum(r.get(hit) or 0 for r in records)
    n = sum(r.get(total) or 0 for r in records)
    return hits / n if n else None


def summarize(records: list[dict], by=CELL_KEYS) -> list[dict]:
    """One row per distinct ``by`` tuple with statistics over replicates.

    A replicate is a (config_id, seed) pair; final/best values are taken per
    replicate before averaging. TPR/FPR pool the upload counts of every
    round and replicate in the group.
    """
    by = tuple(by)
    groups: dict[tuple, dict[tuple, list[dict]]] = {}
    for rec in records:
        g = tuple(rec[k] for k in by)
        groups.setdefault(g, {}).setdefault((rec["config_id"], rec["seed"]), []).append(rec)
    rows = []
    for g in sorted(groups, key=lambda t: tuple((x is None, x) for x in t)):
        reps = [_per_replicate(r) for r in groups[g].values()]
        flat = [rec for r in groups[g].values() for rec in r]
        row = dict(zip(by, g))
        row["n"] = len(reps)
        for m in METRICS:
            for s, v in _stats([r[m] for r in reps]).items():
                row[f"{m}_{s}"] = v
        row["tpr"] = _pooled_rate(flat, "n_bad_flagged", "n_bad")
        row["fpr"] = _pooled_rate(flat, "n_good_flagged", "n_good")
        rows.append(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def render(rows: list[dict], fmt: str, columns=None) -> str:
    """Table text as CSV or as a JSON array of objects."""
    columns = tuple(columns or (rows[0].keys() if rows else summary_columns()))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{c: row.get(c) for c in columns} for row in rows], indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}; use csv or json")


def emit(rows: list[dict], fmt: str, path, columns=None) -> Path:
    path = Path(path)
    text = render(rows, fmt, columns)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {fmt} table: {exc.strerror}", str(path)) from exc
    return path


def _parse(col: str, s: str):
    if s == "":
        return None
    if col in STR_COLUMNS:
        return s
    if col in INT_COLUMNS:
        return int(s)
    return float(s)


def load_table(path) -> list[dict]:
    """Parse a table written by ``emit`` (format chosen by file suffix)."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
