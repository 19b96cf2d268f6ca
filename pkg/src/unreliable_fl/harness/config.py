"""Experiment configuration: a flat YAML-backed dataclass with sweep axes.

Keys in a config file mirror the field names below. Values are merged with
precedence command-line flags > file > named preset > defaults. List-valued fields
(``m``, ``tau``, ``p_u``, ``sigma``, ``defense``) are sweep axes; the run
covers their full product times ``seeds``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..unreliable import CASES, MODES

OUT_ENV = "UFL_OUT_DIR"
DATASETS = ("mnist", "synthetic")
MODELS = ("mlp", "logistic")
DEFENSES = ("none", "deepsa", "oracle", "krum", "pearson", "score")
ETA_MODES = ("absolute", "inverse_beta")
AXES = ("m", "tau", "p_u", "sigma", "defense")
# fields that do not change any metric value
NON_METRIC = ("name", "seeds", "workers", "out_dir")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid experiment config:\n  " + "\n  ".join(problems))


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: str = "mnist"
    data_root: str | None = None
    n_train: int = 2000
    n_test: int = 1000
    pool: int = 2
    synthetic_dim: int = 10
    split_seed: int | None = None
    model: str = "mlp"
    hidden: int = 128
    m: list[int] = field(default_factory=lambda: [50])
    t: int = 120
    tau: list[int] = field(default_factory=lambda: [4])
    eta: float = 1.0
    eta_mode: str = "absolute"
    batch_size: int | None = None
    case: str | None = None
    alpha: float = 1.0
    sigma: list[float] = field(default_factory=lambda: [0.0])
    sigma_relative: bool = False
    p_u: list[float] = field(default_factory=lambda: [0.0])
    corruption_mode: str = "per-round"
    defense: list[str] = field(default_factory=lambda: ["none"])
    detector_path: str | None = None
    window_depth: int = 2
    temperature: float = 0.05
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_every: int = 1
    workers: int = 1
    out_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        p = []
        if self.dataset not in DATASETS:
            p.append(f"dataset: must be one of {DATASETS}, got {self.dataset!r}")
        if self.model not in MODELS:
            p.append(f"model: must be one of {MODELS}, got {self.model!r}")
        if self.dataset == "mnist" and self.model == "logistic":
            p.append("model: logistic regression needs a binary dataset (use dataset: synthetic)")
        for name in ("n_train", "n_test", "pool", "synthetic_dim", "hidden", "t", "window_depth", "eval_every", "workers"):
            if getattr(self, name) < 1:
                p.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.batch_size is not None and self.batch_size < 1:
            p.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if not self.eta > 0:
            p.append(f"eta: must be positive, got {self.eta}")
        if self.eta_mode not in ETA_MODES:
            p.append(f"eta_mode: must be one of {ETA_MODES}")
        elif self.eta_mode == "inverse_beta" and self.model != "logistic":
            p.append("eta_mode: inverse_beta is only defined for the logistic model")
        if not self.temperature > 0:
            p.append("temperature: must be positive")
        for axis in AXES + ("seeds",):
            if not getattr(self, axis):
                p.append(f"{axis}: sweep list must be nonempty")
        if any(m < 1 for m in self.m):
            p.append(f"m: client counts must be >= 1, got {self.m}")
        if any(m > self.n_train for m in self.m):
            p.append(f"m: more clients than training rows ({self.n_train})")
        for tau in self.tau:
            if tau < 1 or self.t % tau:
                p.append(f"tau: {tau} does not divide t={self.t}")
        if any(not 0.0 <= x <= 1.0 for x in self.p_u):
            p.append(f"p_u: probabilities must lie in [0, 1], got {self.p_u}")
        if any(s < 0 for s in self.sigma):
            p.append(f"sigma: must be non-negative, got {self.sigma}")
        if not -1.0 <= self.alpha <= 1.0:
            p.append(f"alpha: must lie in [-1, 1], got {self.alpha}")
        if self.case is not None and self.case not in CASES:
            p.append(f"case: must be one of {tuple(CASES)}, got {self.case!r}")
        if self.corruption_mode not in MODES or self.corruption_mode == "grouped":
            p.append("corruption_mode: must be per-round or fixed-subset")
        for d in self.defense:
            if d not in DEFENSES:
                p.append(f"defense: unknown policy {d!r}; choose from {DEFENSES}")
        if "deepsa" in self.defense and not self.detector_path:
            p.append("detector_path: required when defense includes deepsa")
        if len(set(self.seeds)) != len(self.seeds):
            p.append("seeds: duplicate seeds")
        if p:
            raise ConfigError(p)
        return self

    def resolved(self) -> "ExperimentConfig":
        """Copy with the case tag expanded into alpha and sigma."""
        d = asdict(self)
        if self.case is not None:
            alpha, sigma = CASES[self.case]
            d.update(alpha=alpha, sigma=[sigma])
        return ExperimentConfig(**d)

    def output_dir(self) -> Path:
        root = self.out_dir or os.environ.get(OUT_ENV, "runs")
        return Path(root) / self.name

    def cells(self) -> list["Cell"]:
        r = self.resolved()
        return [
            Cell(m, tau, p_u, r.alpha, sigma, defense)
            for m, tau, p_u, sigma, defense in itertools.product(r.m, r.tau, r.p_u, r.sigma, r.defense)
        ]


@dataclass(frozen=True)
class Cell:
    """One point of the sweep; replicate seeds are applied on top."""

    m: int
    tau: int
    p_u: float
    alpha: float
    sigma: float
    defense: str


_LIST_FIELDS = {f.name for f in fields(ExperimentConfig) if f.name in AXES + ("seeds",)}


def _coerce(name: str, value: Any) -> Any:
    if name in _LIST_FIELDS and not isinstance(value, (list, tuple)):
        return [value]
    return list(value) if isinstance(value, tuple) else value


def _check_types(cfg: dict) -> list[str]:
    problems = []
    scalars = {
        "int": ("n_train", "n_test", "pool", "synthetic_dim", "hidden", "t", "window_depth", "eval_every", "workers"),
        "float": ("eta", "alpha", "temperature"),
    }
    for name in scalars["int"]:
        if not isinstance(cfg[name], int) or isinstance(cfg[name], bool):
            problems.append(f"{name}: expected an integer, got {cfg[name]!r}")
    for name in scalars["float"]:
        if not isinstance(cfg[name], (int, float)) or isinstance(cfg[name], bool):
            problems.append(f"{name}: expected a number, got {cfg[name]!r}")
    for name in ("m", "tau", "seeds"):
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in cfg[name]):
            problems.append(f"{name}: expected a list of integers, got {cfg[name]!r}")
    for name in ("p_u", "sigma"):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in cfg[name]):
            problems.append(f"{name}: expected a list of numbers, got {cfg[name]!r}")
    return problems


def load_config(path=None, overrides: dict | None = None, preset: str | None = None) -> ExperimentConfig:
    """Defaults, then a named preset, then the YAML file at ``path``, then ``overrides``."""
    from .presets import PRESETS

    known = {f.name for f in fields(ExperimentConfig)}
    merged: dict[str, Any] = {}
    layers = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        layers.append(dict(PRESETS[preset], name=preset))
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"config file {path}: {exc.strerror}"]) from exc
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError([f"config file {path}: top level must be a mapping"])
        layers.append(loaded)
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})
    problems = []
    for layer in layers:
        for k, v in layer.items():
            if k not in known:
                problems.append(f"{k}: unknown field")
            else:
                merged[k] = _coerce(k, v)
    if merged.get("case") is not None and ("alpha" in merged or "sigma" in merged):
        problems.append("case: a case tag fixes alpha and sigma; drop one of them")
    if problems:
        raise ConfigError(problems)
    base = asdict(ExperimentConfig())
    base.update(merged)
    for k in ("eta", "alpha", "temperature"):
        if isinstance(base[k], int) and not isinstance(base[k], bool):
            base[k] = float(base[k])
    problems = _check_types(base)
    if problems:
        raise ConfigError(problems)
    base["p_u"] = [float(x) for x in base["p_u"]]
    base["sigma"] = [float(x) for x in base["sigma"]]
    return ExperimentConfig(**base).validate()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj: dict) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cell_identity(cfg: ExperimentConfig, cell: Cell) -> dict:
    """Everything that determines a cell's metrics, minus the replicate seed."""
    r = cfg.resolved()
    ident = {k: v for k, v in asdict(r).items() if k not in NON_METRIC and k not in AXES and k != "case"}
    ident.update(asdict(cell))
    ident.pop("detector_path")
    ident["detector"] = file_digest(cfg.detector_path) if cell.defense == "deepsa" else None
    ident["data_root"] = None  # the path does not matter, the files do
    return ident


def config_id(cfg: ExperimentConfig, cell: Cell) -> str:
    return fingerprint(cell_identity(cfg, cell))
