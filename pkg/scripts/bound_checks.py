"""Tables comparing the convergence bound with simulated gaps on the convex task.

    python scripts/bound_checks.py --seeds 20 --out-dir runs/bound

Writes ``soundness.csv`` (seed, p_u, gap, bound or "diverged", estimated
constants) and ``divergence.csv`` (per-round loss of a heavy-noise run next
to its reliable twin).
"""

import argparse
import csv
from dataclasses import asdict
from pathlib import Path

from unreliable_fl.experiments import divergence_run, soundness_run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--p-u", dest="p_u", nargs="+", type=float, default=[0.0, 0.1])
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("runs/bound"))
    args = p.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    path = args.out_dir / "soundness.csv"
    with open(path, "w", newline="") as fh:
        w = None
        for seed in range(args.seeds):
            for p_u in args.p_u:
                r = soundness_run(seed, p_u, tau=args.tau)
                row = dict(seed=seed, p_u=p_u, gap=r.gap, bound=str(r.bound), **asdict(r.constants))
                if w is None:
                    w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
                    w.writeheader()
                w.writerow(row)
    print(path)

    path = args.out_dir / "divergence.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "round", "reliable_loss", "corrupted_loss", "bound"])
        for seed in range(min(args.seeds, 5)):
            r = divergence_run(seed)
            for k, (a, b) in enumerate(zip(r.clean_loss, r.corrupted_loss), start=1):
                w.writerow([seed, k, repr(float(a)), repr(float(b)), str(r.bound)])
    print(path)


if __name__ == "__main__":
    main()
