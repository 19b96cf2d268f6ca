"""Run named sweeps and write one summary table per sweep.

    python scripts/preset_tables.py --out-dir runs --detector runs/detector.npz
    python scripts/preset_tables.py tau-reliable m-sweep --format json

Sweeps that use deepsa need ``--detector``; train one first with
``ufl train-detector --out runs/detector.npz``. Stored runs are resumed.
"""

import argparse
import logging
from pathlib import Path

from unreliable_fl.harness import emit, read_store, run_experiment, summarize
from unreliable_fl.harness.presets import PRESETS, preset
from unreliable_fl.harness.runner import STORE

# grouping that gives the table its rows
GROUPING = {
    "tau-reliable": ("tau",),
    "tau-unreliable": ("tau",),
    "m-sweep": ("m",),
    "detection": ("sigma",),
    "defenses": ("defense",),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("presets", nargs="*", default=sorted(PRESETS), help="sweeps to run (default: all)")
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--detector", help="detector file for sweeps that use deepsa")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    for name in args.presets:
        overrides = dict(out_dir=args.out_dir, workers=args.workers)
        if "deepsa" in PRESETS[name].get("defense", []):
            if not args.detector:
                p.error(f"{name} needs --detector")
            overrides["detector_path"] = args.detector
        cfg = preset(name, **overrides).validate()
        out = run_experiment(cfg, log=logging.info)
        rows = summarize(read_store(out / STORE), by=GROUPING[name])
        path = emit(rows, args.format, Path(out) / f"summary.{args.format}")
        print(path)


if __name__ == "__main__":
    main()
