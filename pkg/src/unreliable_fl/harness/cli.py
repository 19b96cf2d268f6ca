"""Command-line entry point: ``ufl {run,summarize,bound-sweep,train-detector,detect-eval}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from .. import bound
from ..defense import DetectorHyper
from .config import ConfigError, ExperimentConfig, load_config
from .presets import PRESETS
from .runner import STORE, bundle_for, model_spec, read_store, run_experiment
from .summary import CELL_KEYS, emit, load_table, render, summarize, summary_columns

log = logging.getLogger("ufl")

_LIST_TYPES = {"m": int, "tau": int, "seeds": int, "p_u": float, "sigma": float, "defense": str}
_INT = {"n_train", "n_test", "pool", "synthetic_dim", "split_seed", "hidden", "t", "batch_size", "window_depth", "eval_every", "workers"}
_FLOAT = {"eta", "alpha", "temperature"}


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {s!r}")


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--preset", help="named sweep to start from: " + ", ".join(sorted(PRESETS)))
    g = p.add_argument_group("config overrides (take precedence over the file)")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _LIST_TYPES:
            g.add_argument(flag, dest=f.name, nargs="+", type=_LIST_TYPES[f.name])
        elif f.name in _INT:
            g.add_argument(flag, dest=f.name, type=int)
        elif f.name in _FLOAT:
            g.add_argument(flag, dest=f.name, type=float)
        elif f.name == "sigma_relative":
            g.add_argument(flag, dest=f.name, type=_bool)
        else:
            g.add_argument(flag, dest=f.name)


def config_from_args(args) -> ExperimentConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}
    return load_config(args.config, overrides, preset=args.preset)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    out = run_experiment(cfg, resume=not args.fresh, log=log.info)
    print(out)
    return 0


def _records(path: Path) -> list[dict]:
    if path.is_dir():
        path = path / STORE
    if path.suffix == ".ndjson":
        return read_store(path)
    return load_table(path)


def cmd_summarize(args) -> int:
    records = _records(args.metrics)
    if not records:
        log.warning("no metric records in %s", args.metrics)
    by = args.by or CELL_KEYS
    rows = summarize(records, by=by)
    columns = None if rows else summary_columns(by)
    if args.out:
        print(emit(rows, args.format, args.out, columns))
    else:
        sys.stdout.write(render(rows, args.format, columns))
    return 0


def _constants(args) -> bound.AssumptionConstants:
    vals = {}
    if args.constants:
        vals.update(yaml.safe_load(args.constants.read_text()) or {})
    for k in ("rho", "beta", "delta", "theta", "epsilon", "omega", "eta"):
        if getattr(args, k) is not None:
            vals[k] = getattr(args, k)
    missing = [k for k in ("rho", "beta", "delta", "theta", "epsilon", "omega", "eta") if k not in vals]
    if missing:
        raise ConfigError([f"{k}: required bound constant" for k in missing])
    return bound.AssumptionConstants(**{k: float(vals[k]) for k in ("rho", "beta", "delta", "theta", "epsilon", "omega", "eta")})


BOUND_COLUMNS = ("tau", "p_u", "m", "alpha", "sigma", "bound_or_diverged")


def bound_rows(c: bound.AssumptionConstants, t: int, taus, p_us, ms, alphas, sigmas) -> list[dict]:
    rows = []
    for tau in taus:
        for p_u in p_us:
            for m in ms:
                for alpha in alphas:
                    for sigma in sigmas:
                        r = bound.theorem1_bound(bound.BoundInput(c, m, t, tau, alpha, sigma, p_u))
                        rows.append(dict(zip(BOUND_COLUMNS, (tau, p_u, m, alpha, sigma, "diverged" if r.diverged else r.value))))
    return rows


def cmd_bound_sweep(args) -> int:
    c = _constants(args)
    taus = args.tau or bound.divisors(args.t)
    bad = [tau for tau in taus if args.t % tau]
    if bad:
        raise ConfigError([f"tau: {tau} does not divide t={args.t}" for tau in bad])
    rows = bound_rows(c, args.t, taus, args.p_u, args.m, args.alpha, args.sigma)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_train_detector(args) -> int:
    from ..experiments import PILOT_GRID, pilot_detector

    cfg = config_from_args(args).resolved()
    bundle = bundle_for(cfg, cfg.seeds[0])
    spec = model_spec(cfg, bundle)
    hyper = DetectorHyper(
        hidden=args.hidden_units, epochs=args.epochs, seed=args.detector_seed,
        block_size=args.block_size, block_depth=args.block_depth, combiner=args.combiner,
    )
    model = pilot_detector(
        bundle.public, spec, m=cfg.m[0], t=cfg.t, tau=cfg.tau[0], eta=cfg.eta, p_u=args.pilot_p_u,
        grid=PILOT_GRID, seed=args.pilot_seed, depth=cfg.window_depth, hyper=hyper,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(args.out)
    return 0


def cmd_detect_eval(args) -> int:
    args.detector_path = str(args.detector) if args.detector else args.detector_path
    args.defense = ["deepsa"]
    cfg = config_from_args(args)
    out = run_experiment(cfg, log=log.info)
    rows = summarize(read_store(out / STORE), by=("p_u", "alpha", "sigma"))
    print("p_u,alpha,sigma,tpr,fpr")
    for r in rows:
        print(",".join("" if r[k] is None else f"{r[k]:.4g}" for k in ("p_u", "alpha", "sigma", "tpr", "fpr")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p = argparse.ArgumentParser(prog="ufl", description="Federated learning with unreliable uploads.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a sweep and store per-round metrics")
    add_config_flags(r)
    r.add_argument("--fresh", action="store_true", help="ignore stored records")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", parents=[common], help="replicate statistics per sweep cell")
    s.add_argument("metrics", type=Path, help="run directory, metrics.ndjson or metrics.csv")
    s.add_argument("--by", nargs="+", help=f"grouping columns (default: {' '.join(CELL_KEYS)})")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_summarize)

    b = sub.add_parser("bound-sweep", parents=[common], help="evaluate the convergence bound over a grid")
    b.add_argument("--constants", type=Path, help="YAML file with rho, beta, delta, theta, epsilon, omega, eta")
    for k in ("rho", "beta", "delta", "theta", "epsilon", "omega", "eta"):
        b.add_argument(f"--{k}", type=float)
    b.add_argument("--t", type=int, default=120)
    b.add_argument("--tau", nargs="+", type=int, help="default: every divisor of t")
    b.add_argument("--p-u", dest="p_u", nargs="+", type=float, default=[0.0])
    b.add_argument("--m", nargs="+", type=int, default=[50])
    b.add_argument("--alpha", nargs="+", type=float, default=[1.0])
    b.add_argument("--sigma", nargs="+", type=float, default=[0.0])
    b.add_argument("--out", type=Path)
    b.set_defaults(func=cmd_bound_sweep)

    t = sub.add_parser("train-detector", parents=[common], help="pre-train a detector on pilot runs over the public data")
    add_config_flags(t)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--pilot-p-u", type=float, default=0.2)
    t.add_argument("--pilot-seed", type=int, default=1000)
    t.add_argument("--hidden-units", type=int, default=DetectorHyper.hidden)
    t.add_argument("--epochs", type=int, default=DetectorHyper.epochs)
    t.add_argument("--detector-seed", type=int, default=DetectorHyper.seed)
    t.add_argument("--block-size", type=int, default=DetectorHyper.block_size)
    t.add_argument("--block-depth", type=int, default=DetectorHyper.block_depth)
    t.add_argument("--combiner", choices=("and", "xor"), default=DetectorHyper.combiner)
    t.set_defaults(func=cmd_train_detector)

    d = sub.add_parser("detect-eval", parents=[common], help="run deepsa and report detection rates per cell")
    add_config_flags(d)
    d.add_argument("--detector", type=Path)
    d.set_defaults(func=cmd_detect_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
