"""Experiment configuration: ``key = value`` files, per-task defaults, flag overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError

TASKS = ("pricing", "mixture_estimation", "gas_temperature")


@dataclass
class ExperimentConfig:
    task: str = "pricing"
    seed: int = 2024
    n_rows: int = 2000
    batch: int = 400
    baseline_batch: int = 80
    n_steps: int = 14
    T: float = 1.0
    level: int = 3
    B_ladder: tuple = (5, 10, 20)
    widths: tuple = (15, 30, 50)
    baseline_kernels: tuple = ("rbf", "matern32")
    baseline_form: str = "as_printed"
    baseline_sigma: float = 1.0
    model_seeds: tuple = (0, 1, 2)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 5e-4
    baseline_lr: float = 5e-4
    weight_decay: float = 1e-4
    activation: str = "relu"
    approximator: str = "approximator/approx_L3.ckpt"
    # pricing
    x0: float = 90.0
    strike: float = 80.0
    barrier: float = 85.0
    alphas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    mc_paths: int = 100_000
    # mixture estimation
    alpha_draws: int = 5
    # ideal gas
    volume_per_particle: float = 1.0
    temperature_range: tuple = (1.0, 10.0)
    # out-of-sample sweeps
    oos_points: int = 21
    oos_runs: int = 20
    keep_prob: float = 0.6
    save_bundles: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        for name in ("n_rows", "batch", "baseline_batch", "n_steps", "epochs", "batch_size", "mc_paths", "oos_runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if len(self.B_ladder) != len(self.widths):
            raise ConfigError("B_ladder and widths must have the same length")
        if list(self.B_ladder) != sorted(self.B_ladder):
            raise ConfigError("B_ladder must be increasing")
        if self.task == "gas_temperature" and any(b % 3 for b in self.B_ladder):
            raise ConfigError("gas reference counts must be divisible by 3")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must lie in (0, 1]")
        return self

    @property
    def d(self) -> int:
        return 3 if self.task == "gas_temperature" else 1

    @property
    def B_max(self) -> int:
        return self.B_ladder[-1]

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


TASK_DEFAULTS = {
    "pricing": {},
    "mixture_estimation": {"n_rows": 2800, "x0": 1.0},
    "gas_temperature": {
        "n_rows": 1000,
        "n_steps": 19,
        "B_ladder": (9, 15, 30),
        "widths": (50, 75, 100),
        "activation": "tanhshrink",
        "lr": 1e-2,
        "x0": 1.0,
    },
}


# full-size settings; hours of compute on a workstation CPU
PAPER_SCALE = {
    "pricing": {"n_rows": 10_000, "batch": 2000},
    "mixture_estimation": {"n_rows": 14_000, "batch": 2000},
    "gas_temperature": {"n_rows": 5000, "batch": 800},
    "corpus": {"rows": 39_449, "zero_fraction": 0.2535, "batch": 400},
}
PAPER_SCALE_HOURS = {
    "gen-mmd-corpus": "about 3.5 GPU hours for the corpus and about 1 hour of training",
    "gen-task": "about 2 GPU hours for a pricing run",
}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(name: str, default, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(_coerce(name, kind(), x) if kind is not str else str(x).strip() for x in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def make_config(task: str | None = None, values: dict | None = None) -> ExperimentConfig:
    """Task defaults, then ``values`` (strings or typed) on top."""
    values = dict(values or {})
    task = values.pop("task", None) or task or "pricing"
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    base = ExperimentConfig(task=task)
    for key, value in TASK_DEFAULTS[task].items():
        setattr(base, key, value)
    known = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(base, key, _coerce(key, getattr(base, key), value))
    return base.validate()


@dataclass
class CorpusSettings:
    rows: int = 3000
    zero_fraction: float = 0.25
    batch: int = 100
    n_steps: int = 14
    seed: int = 20240
    sigma: float = 0.5
    sigma2: float = 1.0
    lam: float = 1e-3
    dyadic_order: int = 1
    out: str = "corpus/mmd_corpus.csv"

    def validate(self) -> "CorpusSettings":
        if self.rows < 10:
            raise ConfigError("corpus needs at least 10 rows")
        if not 0.0 <= self.zero_fraction < 1.0:
            raise ConfigError("zero_fraction must lie in [0, 1)")
        if self.batch < 2 or self.n_steps < 1:
            raise ConfigError("batch must be at least 2 and n_steps positive")
        if not self.lam >= 1e-10:
            raise ConfigError("lam must be at least 1e-10")
        return self


@dataclass
class ApproxSettings:
    corpus: str = "corpus/mmd_corpus.csv"
    levels: tuple = (3,)
    seeds: tuple = (0, 1, 2)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 1e-4
    diagnostics: int = 300
    diag_seed: int = 77
    heldout: int = 200
    heldout_seed: int = 4040
    drop_zero_rows: bool = False
    batch: int = 100
    n_steps: int = 14
    outdir: str = "approximator"

    def validate(self) -> "ApproxSettings":
        if not self.levels or any(lv < 1 for lv in self.levels):
            raise ConfigError("levels must be positive")
        if not self.seeds or self.epochs < 1:
            raise ConfigError("need at least one seed and one epoch")
        return self


@dataclass
class ReportSettings:
    outdir: str = "report"

    def validate(self) -> "ReportSettings":
        if not self.outdir:
            raise ConfigError("outdir must not be empty")
        return self


def settings_from(cls, values: dict | None = None):
    """Instance of a settings dataclass with string or typed overrides applied."""
    obj = cls()
    known = {f.name for f in fields(cls)}
    for key, value in (values or {}).items():
        if key not in known:
            raise ConfigError(f"unknown setting {key!r}")
        setattr(obj, key, _coerce(key, getattr(obj, key), value))
    return obj.validate()


def to_dict(obj) -> dict:
    return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes).validate()
