"""Sweep execution with a resumable newline-delimited metrics store.

Each (cell, seed) job produces one record per round. Jobs run in a process
pool; the parent writes finished jobs in job order, so the store does not
depend on the worker count. Wall-clock times go to a separate
``timing.ndjson`` so the metric files stay byte-identical across reruns.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import data, experiments, fed, nn
from ..defense import DetectorModel, detection_metrics, make_policy
from ..unreliable import CorruptionConfig
from .config import Cell, ExperimentConfig, config_id

CSV_COLUMNS = (
    "config_id", "dataset", "model", "m", "t", "tau", "p_u", "alpha", "sigma",
    "defense", "seed", "round", "loss", "accuracy", "tpr", "fpr",
)
COUNT_FIELDS = ("n_bad", "n_bad_flagged", "n_good", "n_good_flagged")
STORE = "metrics.ndjson"
TIMING = "timing.ndjson"
EXPORT = "metrics.csv"


@functools.lru_cache(maxsize=8)
def _bundle(dataset, data_root, n_train, n_test, pool, dim, data_seed) -> experiments.Bundle:
    if dataset == "mnist":
        return experiments.mnist_bundle(data_root, n_train, n_test, pool)
    return experiments.synthetic_bundle(data_seed, n_train, dim, n_test=n_test)


@functools.lru_cache(maxsize=4)
def _detector(path) -> DetectorModel:
    return DetectorModel.load(path)


def bundle_for(cfg: ExperimentConfig, seed: int) -> experiments.Bundle:
    data_seed = seed if cfg.split_seed is None else cfg.split_seed
    # mnist rows do not depend on the seed; keep one cache entry
    key_seed = 0 if cfg.dataset == "mnist" else data_seed
    return _bundle(cfg.dataset, cfg.data_root, cfg.n_train, cfg.n_test, cfg.pool, cfg.synthetic_dim, key_seed)


def model_spec(cfg: ExperimentConfig, bundle: experiments.Bundle) -> nn.ModelSpec:
    if cfg.model == "logistic":
        return nn.ModelSpec.logistic(bundle.train.dim)
    n_classes = int(max(bundle.train.labels.max(), bundle.test.labels.max())) + 1
    return nn.ModelSpec.mlp(bundle.train.dim, max(n_classes, 2), cfg.hidden)


def model_name(spec: nn.ModelSpec) -> str:
    kind = "logistic" if spec.kind == "mlp" and len(spec.layer_sizes) == 2 else spec.kind
    return f"{kind}-" + "-".join(str(s) for s in spec.layer_sizes)


def _num(x):
    """JSON-safe float: nan and inf become None."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def run_replicate(cfg: ExperimentConfig, cell: Cell, seed: int) -> list[dict]:
    cfg = cfg.resolved()
    bundle = bundle_for(cfg, seed)
    spec = model_spec(cfg, bundle)
    split_seed = seed if cfg.split_seed is None else cfg.split_seed
    shards = data.split_iid(bundle.train, cell.m, split_seed).shards(bundle.train)
    eta = cfg.eta / experiments.logistic_beta(bundle.train) if cfg.eta_mode == "inverse_beta" else cfg.eta
    sigma = cell.sigma * experiments.param_rms(spec) if cfg.sigma_relative else cell.sigma
    corruption = CorruptionConfig(alpha=cell.alpha, sigma=sigma, p_u=cell.p_u, seed=seed, mode=cfg.corruption_mode)
    policy = make_policy(
        cell.defense,
        detector=_detector(cfg.detector_path) if cell.defense == "deepsa" else None,
        depth=cfg.window_depth,
        validation=bundle.public,
        temperature=cfg.temperature,
    )
    fc = fed.FedConfig(cell.m, cfg.t, cell.tau, eta, spec, seed=seed, batch_size=cfg.batch_size, eval_every=cfg.eval_every)
    trace = fed.run_federated(fc, corruption, policy, shards, bundle.test)

    cid = config_id(cfg, cell)
    base = {
        "config_id": cid, "dataset": cfg.dataset, "model": model_name(spec), "m": cell.m, "t": cfg.t,
        "tau": cell.tau, "p_u": cell.p_u, "alpha": cell.alpha, "sigma": cell.sigma, "defense": cell.defense,
        "seed": seed,
    }
    out = []
    for r in trace.rounds:
        rec = dict(base, round=r.k, loss=_num(r.loss), accuracy=_num(r.accuracy), tpr=None, fpr=None)
        counts = dict.fromkeys(COUNT_FIELDS)
        if r.mask is not None:
            rec["tpr"], rec["fpr"] = detection_metrics(r.mask, r.corrupted)
            flagged = ~r.mask
            counts = {
                "n_bad": int(r.corrupted.sum()),
                "n_bad_flagged": int((flagged & r.corrupted).sum()),
                "n_good": int((~r.corrupted).sum()),
                "n_good_flagged": int((flagged & ~r.corrupted).sum()),
            }
        rec.update(counts)
        out.append(rec)
    return out


def _job(args):
    cfg, cell, seed = args
    t0 = time.perf_counter()
    records = run_replicate(cfg, cell, seed)
    return records, time.perf_counter() - t0


def _dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def read_store(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                # a torn final line from an interrupted run is dropped on resume
                break
    return out


def jobs_for(cfg: ExperimentConfig) -> list[tuple[Cell, int]]:
    return [(cell, seed) for cell in cfg.cells() for seed in cfg.seeds]


def run_experiment(cfg: ExperimentConfig, resume: bool = True, log=None) -> Path:
    """Run every missing (cell, seed) job and return the output directory.

    A job counts as done when all of its rounds are in the store. Partial
    jobs are dropped and recomputed.
    """
    cfg.validate()
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    store = out / STORE
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")

    jobs = jobs_for(cfg)
    ids = {cell: config_id(cfg, cell) for cell in cfg.cells()}
    existing = read_store(store) if resume else []
    groups: dict[tuple[str, int], list[dict]] = {}
    for rec in existing:
        groups.setdefault((rec["config_id"], rec["seed"]), []).append(rec)
    done = set()
    for cell, seed in jobs:
        rounds = cfg.t // cell.tau
        recs = groups.get((ids[cell], seed), [])
        if [r["round"] for r in recs] == list(range(1, rounds + 1)):
            done.add((cell, seed))

    _rewrite(store, jobs, ids, groups, done)
    todo = [(cfg, cell, seed) for cell, seed in jobs if (cell, seed) not in done]
    if log:
        log(f"{len(jobs)} jobs, {len(done)} already stored, {len(todo)} to run")
    if todo:
        with open(store, "a") as fh, open(out / TIMING, "a") as tf:
            if cfg.workers > 1 and len(todo) > 1:
                with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                    _drain(pool.map(_job, todo), todo, fh, tf, log)
            else:
                _drain(map(_job, todo), todo, fh, tf, log)
        # resumed runs append out of order; restore canonical job order
        groups = {}
        for rec in read_store(store):
            groups.setdefault((rec["config_id"], rec["seed"]), []).append(rec)
        _rewrite(store, jobs, ids, groups, {job for job in jobs})
    export_csv(read_store(store), out / EXPORT)
    return out


def _rewrite(store: Path, jobs, ids, groups, keep) -> None:
    """Atomically rewrite ``store`` with the kept jobs in job order."""
    tmp = store.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        for cell, seed in jobs:
            if (cell, seed) in keep:
                for rec in groups[(ids[cell], seed)]:
                    fh.write(_dumps(rec) + "\n")
    os.replace(tmp, store)


def _drain(results, todo, fh, tf, log):
    for (cfg, cell, seed), (records, secs) in zip(todo, results):
        for rec in records:
            fh.write(_dumps(rec) + "\n")
        fh.flush()
        tf.write(_dumps({"config_id": records[0]["config_id"], "seed": seed, "seconds": round(secs, 3)}) + "\n")
        tf.flush()
        if log:
            log(f"{records[0]['config_id']} seed={seed} {cell} {secs:.1f}s")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_csv(records: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])


def final_records(records: list[dict]) -> list[dict]:
    """Last-round record of every (config_id, seed)."""
    last: dict[tuple[str, int], dict] = {}
    for rec in records:
        key = (rec["config_id"], rec["seed"])
        if key not in last or rec["round"] > last[key]["round"]:
            last[key] = rec
    return list(last.values())


def as_array(records: list[dict], field: str) -> np.ndarray:
    return np.array([np.nan if r[field] is None else r[field] for r in records], dtype=float)
