"""Exit criteria at their stated tolerances.

Each test prints one PASS/FAIL line (collected into the terminal summary)
and then asserts it. Sweeps go through the harness, so setting
``UFL_ACCEPTANCE_DIR`` to a persistent directory lets reruns resume.
"""

import math
import os
import time
from decimal import Decimal, getcontext
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from unreliable_fl import bound, data, experiments, fed, nn
from unreliable_fl.defense import deepsa_aggregate, krum_index
from unreliable_fl.harness import read_store, run_experiment, summarize
from unreliable_fl.harness.presets import TAUS, preset
from unreliable_fl.harness.runner import EXPORT, STORE, bundle_for, final_records, model_spec
from unreliable_fl.unreliable import CorruptionConfig

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


def report(n: int, ok: bool, detail: str, seconds: float, limit: float) -> None:
    ok = ok and seconds < limit
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({seconds:.1f}s, limit {limit:g}s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory) -> Path:
    env = os.environ.get("UFL_ACCEPTANCE_DIR")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def detector_path(work_dir) -> tuple[Path, float]:
    """Detector pre-trained on pilot runs over the public rows, and its training time."""
    path = work_dir / "detector.npz"
    t0 = time.perf_counter()
    if not path.exists():
        cfg = preset("detection", detector_path="unused")
        b = bundle_for(cfg, 0)
        experiments.pilot_detector(b.public, model_spec(cfg, b)).save(path)
    return path, time.perf_counter() - t0


def _means_by(records, key):
    """Mean final loss per ``key`` value over the given final-round records."""
    out = {}
    for r in records:
        out.setdefault(r[key], []).append(r["loss"])
    return {k: float(np.mean(v)) for k, v in sorted(out.items())}


def _spearman(x, y) -> float:
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    return float(np.corrcoef(rx, ry)[0, 1])


def _phi_exact(tau, delta, beta, eta) -> Fraction:
    d, b, e = Fraction(delta), Fraction(beta), Fraction(eta)
    h = Fraction(0)
    for _ in range(tau):
        h = (1 + e * b) * h + e * d
    return h - e * d * tau


def test_criterion_01_phi_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    exact_zero = all(bound.phi(1, *p) == 0.0 for p in [(0.1, 1.0, 0.01), (3.0, 0.2, 4.0), (1e-6, 50.0, 0.019)])
    for _ in range(200):
        tau = int(rng.integers(2, 101))
        beta = 10 ** rng.uniform(-2, 1)
        delta = 10 ** rng.uniform(-4, 1)
        eta = rng.uniform(1e-3, 1.0) / beta
        exact = _phi_exact(tau, delta, beta, eta)
        worst = max(worst, abs(Fraction(bound.phi(tau, delta, beta, eta)) - exact) / exact)
    ok = exact_zero and worst <= 1e-12
    report(1, ok, f"phi(1)=0 exactly: {exact_zero}; max relative error {float(worst):.2e} on 200 points",
           time.perf_counter() - t0, 1.0)


def _h_decimal(tau: Decimal, c, offset) -> Decimal:
    d, b, e, off = (Decimal(x) for x in (c.delta, c.beta, c.eta, offset))
    phi = (d / b) * ((e * b + 1) ** tau - 1) - e * d * tau
    return (phi + off) / tau


def test_criterion_02_h_convexity():
    t0 = time.perf_counter()
    getcontext().prec = 60
    rng = np.random.default_rng(2)
    worst_rel, min_h2 = 0.0, math.inf
    for _ in range(1000):
        beta = 10 ** rng.uniform(-2, 1)
        c = bound.AssumptionConstants(rho=1, beta=beta, delta=10 ** rng.uniform(-4, 0), theta=1, epsilon=1, omega=1,
                                      eta=rng.uniform(1e-3, 1.0) / beta)
        offset = float(10 ** rng.uniform(-4, 0)) * rng.integers(0, 2)
        tau = rng.uniform(1.5, 100)
        h2 = bound.h_second_derivative(tau, c, offset)
        t, h = Decimal(tau), Decimal("1e-12")
        fd = (_h_decimal(t + h, c, offset) - 2 * _h_decimal(t, c, offset) + _h_decimal(t - h, c, offset)) / (h * h)
        min_h2 = min(min_h2, h2)
        worst_rel = max(worst_rel, abs(h2 - float(fd)) / abs(float(fd)))
    ok = min_h2 >= -1e-9 and worst_rel <= 1e-6
    report(2, ok, f"min H''={min_h2:.3e}; max relative deviation from finite differences {worst_rel:.2e} over 1000 draws",
           time.perf_counter() - t0, 10.0)


def test_criterion_03_soundness():
    t0 = time.perf_counter()
    runs = [experiments.soundness_run(seed, p_u) for seed in range(20) for p_u in (0.0, 0.1)]
    finite = [r for r in runs if r.holds is not None]
    held = sum(r.holds for r in finite)
    frac = held / len(finite) if finite else 0.0
    step_ok = all(r.constants.step_ok for r in runs)
    ok = bool(finite) and frac >= 0.95 and step_ok
    report(3, ok, f"bound holds in {held}/{len(finite)} runs with a finite bound "
                  f"({len(runs) - len(finite)} of {len(runs)} diverged); eta<=1/beta: {step_ok}",
           time.perf_counter() - t0, 300.0)


def test_criterion_04_tau_trend_reliable(work_dir):
    t0 = time.perf_counter()
    cfg = preset("tau-reliable", out_dir=str(work_dir))
    recs = final_records(read_store(run_experiment(cfg) / STORE))
    means = _means_by(recs, "tau")
    rho = _spearman(list(means), list(means.values()))
    report(4, rho >= 0.8, f"Spearman(tau, mean final loss)={rho:.3f}; means "
                          + ", ".join(f"{k}:{v:.5f}" for k, v in means.items()),
           time.perf_counter() - t0, 300.0)


def test_criterion_05_interior_optimum(work_dir):
    t0 = time.perf_counter()
    cfg = preset("tau-unreliable", out_dir=str(work_dir))
    recs = final_records(read_store(run_experiment(cfg) / STORE))
    argmins = []
    for rep in range(5):
        seeds = set(range(5 * rep, 5 * rep + 5))
        means = _means_by([r for r in recs if r["seed"] in seeds], "tau")
        argmins.append(min(means, key=means.get))
    interior = sum(TAUS[0] < a < TAUS[-1] for a in argmins)
    report(5, interior >= 4, f"argmin tau per 5-seed repetition {argmins}; interior in {interior}/5",
           time.perf_counter() - t0, 1200.0)


def test_criterion_06_client_count_trend(work_dir):
    t0 = time.perf_counter()
    cfg = preset("m-sweep", out_dir=str(work_dir))
    recs = final_records(read_store(run_experiment(cfg) / STORE))
    means = _means_by(recs, "m")
    vals = list(means.values())
    ok = all(b < a for a, b in zip(vals, vals[1:]))
    report(6, ok, "mean final loss by M " + ", ".join(f"{k}:{v:.4f}" for k, v in means.items()),
           time.perf_counter() - t0, 900.0)


def test_criterion_07_divergence_regime():
    t0 = time.perf_counter()
    results = [experiments.divergence_run(seed) for seed in range(5)]
    diverged = all(r.bound.diverged for r in results)
    worse = all(np.all(r.corrupted_loss > r.clean_loss) for r in results)
    gap = min(float(np.min(r.corrupted_loss - r.clean_loss)) for r in results)
    report(7, diverged and worse, f"bound diverged in all 5 seeds: {diverged}; corrupted loss above reliable "
                                  f"at every round: {worse} (smallest excess {gap:.3g})",
           time.perf_counter() - t0, 120.0)


def test_criterion_08_detection_trend(work_dir, detector_path):
    path, train_secs = detector_path
    t0 = time.perf_counter()
    cfg = preset("detection", out_dir=str(work_dir), detector_path=str(path))
    rows = summarize(read_store(run_experiment(cfg) / STORE), by=("sigma",))
    tpr = [r["tpr"] for r in rows]
    fpr = [r["fpr"] for r in rows]
    mono = all(b >= a for a, b in zip(tpr, tpr[1:]))
    ok = mono and tpr[-1] >= 0.95 and fpr[-1] <= 0.05
    detail = "TPR/FPR by relative sigma " + ", ".join(
        f"{r['sigma']}:{r['tpr']:.3f}/{r['fpr']:.3f}" for r in rows)
    report(8, ok, detail, time.perf_counter() - t0 + train_secs, 600.0)


def test_criterion_09_defense_ordering(work_dir, detector_path):
    path, _ = detector_path
    t0 = time.perf_counter()
    cfg = preset("defenses", out_dir=str(work_dir), detector_path=str(path))
    recs = final_records(read_store(run_experiment(cfg) / STORE))
    acc = {}
    for r in recs:
        acc.setdefault(r["defense"], []).append(r["accuracy"])
    acc = {k: float(np.mean(v)) for k, v in acc.items()}
    ok = all(acc["deepsa"] >= acc[k] - 0.01 for k in ("krum", "pearson", "score")) and acc["deepsa"] >= acc["none"] + 0.03
    report(9, ok, "mean final accuracy " + ", ".join(f"{k}:{v:.4f}" for k, v in sorted(acc.items(), key=lambda x: -x[1])),
           time.perf_counter() - t0, 1800.0)


def _brute_krum(models):
    sums = [sum(math.dist(a, b) for b in models) for a in models]
    best = min(sums)
    return next(i for i, s in enumerate(sums) if s <= best * (1 + 1e-12))


def test_criterion_10_algebraic_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    agg_err = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 30))
        models = rng.normal(size=(m, 40))
        w = rng.random(m)
        w /= w.sum()
        agg_err = max(agg_err, float(np.max(np.abs(deepsa_aggregate(models, w, np.ones(m)) - fed.aggregate(models, w)))))

    d = data.gen_synthetic_logreg(300, 6, seed=4)
    traj_err = 0.0
    for spec in (nn.ModelSpec.logistic(6), nn.ModelSpec.mlp(6, 2, hidden=8)):
        cfg = fed.FedConfig(1, 30, 1, 0.3, spec, seed=2)
        trace = fed.run_federated(cfg, CorruptionConfig(), None, [d])
        central = fed.centralized_train(spec, d, 30, 0.3, seed=2, tol=None)
        traj_err = max(traj_err, float(np.max(np.abs(trace.globals() - central))))

    krum_ok = 0
    for _ in range(200):
        n = int(rng.integers(2, 21))
        models = rng.normal(size=(n, int(rng.integers(1, 10)))) * rng.uniform(0.1, 10)
        krum_ok += krum_index(models) == _brute_krum(models)
    ok = agg_err <= 1e-12 and traj_err <= 1e-12 and krum_ok == 200
    report(10, ok, f"all-ones mask vs FedAvg {agg_err:.1e}; M=1 vs centralized {traj_err:.1e}; "
                   f"krum matches brute force {krum_ok}/200", time.perf_counter() - t0, 60.0)


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    kw = dict(n_train=400, n_test=100, t=12, tau=[2, 3], m=[5], case="case3", p_u=[0.3], seeds=[0, 1])
    outs = []
    for run in ("a", "b"):
        cfg = preset("tau-reliable", out_dir=str(tmp_path / run), **kw)
        mnist = preset("defenses", out_dir=str(tmp_path / run), t=8, tau=[4], m=[10], seeds=[0],
                       defense=["none", "krum", "pearson", "score", "oracle"])
        outs.append([run_experiment(c) for c in (cfg, mnist)])
    same = all((a / f).read_bytes() == (b / f).read_bytes() for a, b in zip(*outs) for f in (STORE, EXPORT))
    report(11, same, f"metric files byte-identical across reruns: {same}", time.perf_counter() - t0, 120.0)
