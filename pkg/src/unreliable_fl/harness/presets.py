"""Named desk-scale sweeps behind the figure scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import asdict

from .config import ExperimentConfig

TAUS = [1, 2, 3, 4, 6, 12]

PRESETS: dict[str, dict] = {
    # loss versus tau with reliable uploads on the convex task
    "tau-reliable": dict(
        dataset="synthetic", model="logistic", m=[10], t=120, tau=TAUS,
        eta=1.0, eta_mode="inverse_beta", p_u=[0.0],
    ),
    # loss versus tau with sign-flipped uploads; 25 seeds give 5 disjoint 5-seed means
    "tau-unreliable": dict(
        dataset="mnist", m=[50], t=120, tau=TAUS, eta=2.5, case="case1", p_u=[0.1],
        seeds=list(range(25)), eval_every=120,
    ),
    # final loss versus client count
    "m-sweep": dict(dataset="mnist", m=[10, 20, 40], t=120, tau=[1], eta=1.0, case="case3", p_u=[0.1], eval_every=120),
    # detection rate versus noise level, sigma relative to the parameter rms
    "detection": dict(
        dataset="mnist", m=[50], t=120, tau=[4], eta=1.0, alpha=0.8, sigma=[0.05, 0.1, 0.2, 0.4, 0.8],
        sigma_relative=True, p_u=[0.2], defense=["deepsa"], eval_every=120,
    ),
    # defense comparison
    "defenses": dict(
        dataset="mnist", m=[50], t=120, tau=[4], eta=1.0, case="case1", p_u=[0.2],
        defense=["none", "deepsa", "krum", "pearson", "score"], eval_every=120,
    ),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = asdict(ExperimentConfig(name=name))
    d.update(PRESETS[name])
    d.update(overrides)
    return ExperimentConfig(**d)
