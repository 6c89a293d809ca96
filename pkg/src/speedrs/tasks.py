"""Task datasets (pricing, mixture estimation, gas temperature), training runs and sweeps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .approximator import MmdApproximator
from .config import ExperimentConfig
from .errors import ConfigError
from .features import (
    FeatureTable,
    PointwiseFeaturizer,
    Regressor,
    SpeedrsFeaturizer,
    build_reference_sets,
    nested_subset,
    rebuild_reference,
    refs_manifest,
    train_regressor,
)
from .gas import simulate_ideal_gas
from .neural import TrainConfig, load_checkpoint, save_checkpoint, split_dataset
from .pool import run_rows
from .paths import PathBundle, subsample_irregular, write_pb1
from .sim import (
    CEV,
    GBM,
    IdealGas,
    MeanReverting,
    Mixture,
    RBergomi,
    SimGrid,
    barrier_payoff,
    derive_seed,
    make_rng,
    sample_params,
    simulate_array,
    spec_json,
    spec_to_dict,
)

# fixed model parameters for the out-of-sample sweeps
OOS_MEAN_REVERTING = dict(mu=0.15, kappa=0.4, theta=0.23, xi=0.25, rho=-0.94, v0=0.65)
OOS_RBERGOMI = dict(xi0=0.1, nu=1.2, H=0.25, rho=-0.85)
OOS_CEV = dict(mu=0.1, sigma=0.5, gamma=0.8)
OOS_SIGMAS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def task_grid(cfg: ExperimentConfig) -> SimGrid:
    return SimGrid(cfg.T, cfg.n_steps)


# --- row construction ------------------------------------------------------------


@dataclass
class TaskRow:
    spec: object
    target: float
    label_se: float
    values: np.ndarray  # (batch, len) or (batch, len, 3)
    seed: int


def _mixture_spec(cfg, rng, alpha):
    mr = sample_params("MeanReverting", rng, x0=cfg.x0)
    rb = sample_params("RBergomi", rng, x0=cfg.x0)
    return Mixture(float(alpha), mr, rb)


def row_alpha(cfg: ExperimentConfig, r: int) -> tuple[int, float]:
    """(group index, alpha) of row ``r`` for the two mixture tasks."""
    if cfg.task == "pricing":
        return r, cfg.alphas[r % len(cfg.alphas)]
    per = cfg.alpha_draws + 2
    group, q = divmod(r, per)
    if q < 2:
        return group, float(q == 0)  # endpoints 1 and 0 for every spec pair
    draws = make_rng(derive_seed(cfg.seed, 7, group)).uniform(0.0, 1.0, cfg.alpha_draws)
    return group, float(draws[q - 2])


def mc_price(spec, grid: SimGrid, n_paths: int, seed: int, strike: float, barrier: float, chunk: int = 25_000):
    """Monte Carlo price and its standard error, simulated in chunks."""
    total, total_sq, done = 0.0, 0.0, 0
    part = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        pay = barrier_payoff(simulate_array(spec, grid, m, derive_seed(seed, part)), strike, barrier)
        total += pay.sum()
        total_sq += (pay**2).sum()
        done += m
        part += 1
    mean = total / n_paths
    var = max(total_sq / n_paths - mean**2, 0.0)
    return float(mean), float(np.sqrt(var / n_paths))


def make_task_row(cfg: ExperimentConfig, r: int) -> TaskRow:
    grid = task_grid(cfg)
    row_seed = derive_seed(cfg.seed, 1, r)
    n = max(cfg.batch, cfg.baseline_batch)
    if cfg.task == "gas_temperature":
        lo, hi = cfg.temperature_range
        temp = float(make_rng(derive_seed(row_seed, 0)).uniform(lo, hi))
        spec = IdealGas(temp, n, n * cfg.volume_per_particle)
        values = simulate_ideal_gas(spec, grid, derive_seed(row_seed, 1)).stacked()[1]
        return TaskRow(spec, temp, 0.0, values, row_seed)
    group, alpha = row_alpha(cfg, r)
    if cfg.task == "pricing":
        spec = _mixture_spec(cfg, make_rng(derive_seed(row_seed, 0)), alpha)
        target, se = mc_price(spec, grid, cfg.mc_paths, derive_seed(row_seed, 2), cfg.strike, cfg.barrier)
    else:
        spec = _mixture_spec(cfg, make_rng(derive_seed(cfg.seed, 2, group)), alpha)
        target, se = alpha, 0.0
    values = simulate_array(spec, grid, n, derive_seed(row_seed, 1))
    return TaskRow(spec, float(target), se, values, row_seed)


# --- dataset generation ---------------------------------------------------------


class Featurizers:
    """SPEEDRS plus pointwise baselines sharing one reference pool."""

    def __init__(self, cfg: ExperimentConfig, refs, approximator: MmdApproximator):
        self.cfg = cfg
        self.refs = refs
        self.speedrs = SpeedrsFeaturizer(refs, approximator)
        self.baselines = {
            k: PointwiseFeaturizer(refs, k, cfg.baseline_sigma, cfg.baseline_form) for k in cfg.baseline_kernels
        }

    def names(self) -> list[str]:
        return ["speedrs", *self.baselines]

    def __call__(self, times, values) -> dict:
        out = {"speedrs": self.speedrs((times, values[: self.cfg.batch]))}
        base = (times, values[: self.cfg.baseline_batch])
        for k, f in self.baselines.items():
            out[k] = f(base)
        return out


def load_approximator(cfg: ExperimentConfig, workdir) -> MmdApproximator:
    path = FsPath(workdir) / cfg.approximator
    if not path.exists():
        raise FileNotFoundError(f"approximator checkpoint {path} not found; run train-approximator first")
    approx = MmdApproximator.load(path)
    if approx.level != cfg.level:
        raise ConfigError(f"approximator level {approx.level} differs from config level {cfg.level}")
    return approx


def task_refs(cfg: ExperimentConfig):
    return build_reference_sets(
        cfg.B_max, cfg.d, derive_seed(cfg.seed, 3), task_grid(cfg), cfg.level, cfg.batch, cfg.baseline_batch
    )


def generate_task(cfg: ExperimentConfig, approximator: MmdApproximator, outdir) -> dict:
    """Write feature tables, the reference manifest and label-noise summary to ``outdir``."""
    outdir = FsPath(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    refs = task_refs(cfg)
    feats = Featurizers(cfg, refs, approximator)
    grid = task_grid(cfg)

    def one(r):
        row = make_task_row(cfg, r)
        f = feats(grid.times, row.values)
        if not cfg.save_bundles:
            row.values = None  # keep memory flat over thousands of rows
        return row, f

    results = run_rows(one, cfg.n_rows)
    tables = {}
    specs = [spec_json(row.spec) for row, _ in results]
    seeds = [row.seed for row, _ in results]
    y = np.array([row.target for row, _ in results])
    written = []
    for name in feats.names():
        X = np.stack([f[name] for _, f in results])
        tables[name] = FeatureTable(X, y, specs, seeds)
        path = outdir / f"features_{name}.csv"
        tables[name].write_csv(path)
        written.append(path)
    manifest = refs_manifest(refs, B_total=cfg.B_max, d=cfg.d, level=cfg.level, batch=cfg.batch,
                             baseline_batch=cfg.baseline_batch)
    (outdir / "references.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    written.append(outdir / "references.json")
    se = np.array([row.label_se for row, _ in results])
    noise = {"mean_label_variance": float(np.mean(se**2)), "max_label_se": float(se.max()), "rows": len(se)}
    (outdir / "label_noise.json").write_text(json.dumps(noise, indent=1, sort_keys=True) + "\n")
    written.append(outdir / "label_noise.json")
    if cfg.save_bundles:
        bdir = outdir / "bundles"
        bdir.mkdir(exist_ok=True)
        for r, (row, _) in enumerate(results):
            vals = row.values[: cfg.batch]
            b = PathBundle.from_arrays(grid.times, vals, seed=row.seed, spec=spec_to_dict(row.spec))
            write_pb1(b, bdir / f"row{r:05d}.pb1")
    return {"tables": tables, "refs": refs, "outputs": written}


def load_refs(cfg: ExperimentConfig, taskdir):
    manifest = json.loads((FsPath(taskdir) / "references.json").read_text())
    grid = task_grid(cfg)
    return [
        rebuild_reference(e, grid, manifest["level"], manifest["batch"], manifest["baseline_batch"])
        for e in manifest["references"]
    ]


# --- training and evaluation ----------------------------------------------------


def model_plan(cfg: ExperimentConfig, refs) -> list[dict]:
    """Every (model, B, width, column subset) trained per seed."""
    plan = []
    for B, width in zip(cfg.B_ladder, cfg.widths):
        plan.append({"model": "speedrs", "B": B, "width": width, "columns": nested_subset(refs, B)})
    full = list(range(len(refs)))
    for k in cfg.baseline_kernels:
        plan.append({"model": k, "B": cfg.B_max, "width": cfg.widths[-1], "columns": full})
    return plan


def train_config(cfg: ExperimentConfig, model: str, seed: int) -> TrainConfig:
    lr = cfg.lr if model == "speedrs" else cfg.baseline_lr
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, initial_lr=lr, weight_decay=cfg.weight_decay, seed=seed
    )


def model_path(taskdir, model: str, B: int, seed: int) -> FsPath:
    return FsPath(taskdir) / "models" / f"{model}_B{B}_s{seed}.ckpt"


def train_task(cfg: ExperimentConfig, taskdir) -> list[dict]:
    """Train the ladder and baselines for every model seed; checkpoints go under ``models/``."""
    taskdir = FsPath(taskdir)
    refs = load_refs(cfg, taskdir)
    tables = {name: FeatureTable.read_csv(taskdir / f"features_{name}.csv") for name in ["speedrs", *cfg.baseline_kernels]}
    (taskdir / "models").mkdir(exist_ok=True)
    jobs = [(p, s) for s in cfg.model_seeds for p in model_plan(cfg, refs)]

    def one(i):
        plan, seed = jobs[i]
        table = tables[plan["model"]].columns(plan["columns"])
        reg, metrics = train_regressor(table, plan["width"], train_config(cfg, plan["model"], seed), cfg.activation)
        save_checkpoint(
            model_path(taskdir, plan["model"], plan["B"], seed), reg.model, reg.standardizer,
            family=plan["model"], B=plan["B"], columns=plan["columns"], seed=seed,
        )
        return {"model": plan["model"], "B": plan["B"], "width": plan["width"], "seed": seed, **metrics}

    return run_rows(one, len(jobs))


def load_regressor(path) -> tuple[Regressor, dict]:
    model, std, meta = load_checkpoint(path)
    return Regressor(model, std), meta


def evaluate_task(cfg: ExperimentConfig, taskdir) -> list[dict]:
    """Recompute per-seed train/valid MSE from the saved checkpoints."""
    taskdir = FsPath(taskdir)
    refs = load_refs(cfg, taskdir)
    tables = {name: FeatureTable.read_csv(taskdir / f"features_{name}.csv") for name in ["speedrs", *cfg.baseline_kernels]}
    runs = []
    for seed in cfg.model_seeds:
        for plan in model_plan(cfg, refs):
            reg, meta = load_regressor(model_path(taskdir, plan["model"], plan["B"], seed))
            table = tables[plan["model"]].columns(meta["columns"])
            tr, va = split_dataset(len(table), TrainConfig().split_ratio, seed)
            pred = reg.predict(table.X)
            runs.append({
                "model": plan["model"], "B": plan["B"], "width": plan["width"], "seed": seed,
                "train_mse": float(np.mean((pred[tr] - table.y[tr]) ** 2)),
                "valid_mse": float(np.mean((pred[va] - table.y[va]) ** 2)),
            })
    return runs


def summarize_runs(task: str, runs: list[dict]) -> list[dict]:
    """Mean and sample SD over seeds per (model, B, width), in first-seen order."""
    keys = []
    for r in runs:
        k = (r["model"], r["B"], r["width"])
        if k not in keys:
            keys.append(k)
    out = []
    for model, B, width in keys:
        sel = [r for r in runs if (r["model"], r["B"], r["width"]) == (model, B, width)]
        tr = np.array([r["train_mse"] for r in sel])
        va = np.array([r["valid_mse"] for r in sel])
        sd = (lambda a: float(a.std(ddof=1)) if len(a) > 1 else 0.0)
        out.append({
            "task": task, "model": model, "B": B, "width": width,
            "train_mse": float(tr.mean()), "train_sd": sd(tr),
            "valid_mse": float(va.mean()), "valid_sd": sd(va),
        })
    return out


# --- out-of-sample sweeps -------------------------------------------------------


def _oos_cases(cfg: ExperimentConfig):
    """(experiment, sweep variable, [(value, spec, target or None)]) for the task."""
    alphas = np.linspace(0.0, 1.0, cfg.oos_points)
    mr = MeanReverting(x0=cfg.x0, **OOS_MEAN_REVERTING)
    rb = RBergomi(x0=cfg.x0, **OOS_RBERGOMI)
    cev = CEV(x0=cfg.x0, **OOS_CEV)
    if cfg.task == "pricing":
        yield "mixture", "alpha", [(a, Mixture(float(a), mr, rb)) for a in alphas]
        yield "gbm", "sigma", [(s, GBM(mu=0.1, sigma=s, x0=cfg.x0)) for s in OOS_SIGMAS]
        yield "cev", "sigma", [(s, CEV(mu=0.1, sigma=s, gamma=OOS_CEV["gamma"], x0=cfg.x0)) for s in OOS_SIGMAS]
    elif cfg.task == "mixture_estimation":
        yield "rbergomi_cev", "alpha", [(a, Mixture(float(a), rb, cev)) for a in alphas]
        yield "cev_mean_reverting", "alpha", [(a, Mixture(float(a), cev, mr)) for a in alphas]
    else:
        raise ConfigError("out-of-sample sweeps exist for the pricing and mixture_estimation tasks")


def oos_sweep(cfg: ExperimentConfig, taskdir, approximator: MmdApproximator, model_seed: int = 0) -> list[dict]:
    """Predictions of SPEEDRS and baselines at the top rung, averaged over ``oos_runs`` bundles.

    The irregular variant subsamples every path independently, so the bundle
    is ragged; pointwise baselines cannot featurise it and are left out there.
    """
    taskdir = FsPath(taskdir)
    refs = load_refs(cfg, taskdir)
    feats = Featurizers(cfg, refs, approximator)
    grid = task_grid(cfg)
    regs = {}
    for name in feats.names():
        reg, meta = load_regressor(model_path(taskdir, name, cfg.B_max, model_seed))
        regs[name] = (reg, meta["columns"])
    cases = [(exp, var, v, spec) for exp, var, items in _oos_cases(cfg) for v, spec in items]

    def one(i):
        exp, var, value, spec = cases[i]
        case_seed = derive_seed(cfg.seed, 11, i)
        if cfg.task == "pricing":
            target, _ = mc_price(spec, grid, cfg.mc_paths, derive_seed(case_seed, 0), cfg.strike, cfg.barrier)
        else:
            target = spec.alpha
        preds = {("regular", n): [] for n in regs}
        preds.update({("irregular", "speedrs"): []})
        for run in range(cfg.oos_runs):
            values = simulate_array(spec, grid, max(cfg.batch, cfg.baseline_batch), derive_seed(case_seed, 1, run))
            f = feats(grid.times, values)
            for name, (reg, cols) in regs.items():
                preds[("regular", name)].append(reg.predict(f[name][cols])[0])
            full = PathBundle.from_arrays(grid.times, values[: cfg.batch])
            ragged = PathBundle(tuple(
                subsample_irregular(p, keep_prob=cfg.keep_prob, seed=derive_seed(case_seed, 2, run, k))
                for k, p in enumerate(full)
            ))
            reg, cols = regs["speedrs"]
            preds[("irregular", "speedrs")].append(reg.predict(feats.speedrs(ragged)[cols])[0])
        return [
            {"experiment": exp, "sampling": sampling, "sweep_var": var, "sweep_value": float(value),
             "model": name, "prediction": float(np.mean(p)), "target": float(target)}
            for (sampling, name), p in preds.items()
        ]

    rows = [r for chunk in run_rows(one, len(cases)) for r in chunk]
    order = {"regular": 0, "irregular": 1}
    rows.sort(key=lambda r: (r["experiment"], order[r["sampling"]], r["model"], r["sweep_value"]))
    return rows

