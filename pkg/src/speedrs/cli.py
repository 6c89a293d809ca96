"""``speedrs`` command line: corpus, approximator, task datasets, training, sweeps, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path as FsPath

from . import __version__
from ._backend import BACKEND
from .config import (
    PAPER_SCALE,
    PAPER_SCALE_HOURS,
    ApproxSettings,
    CorpusSettings,
    ExperimentConfig,
    ReportSettings,
    make_config,
    parse_config_text,
    settings_from,
    to_dict,
)
from .errors import (
    ConfigError,
    EmptyResults,
    NonFiniteLoss,
    NumericalOverflow,
    SingularSystem,
    SpeedrsError,
)
from .pool import threads

log = logging.getLogger("speedrs")

TASK_VERBS = ("gen-task", "train", "evaluate", "oos")
VERBS = ("gen-mmd-corpus", "train-approximator", *TASK_VERBS, "report")
SETTINGS = {"gen-mmd-corpus": CorpusSettings, "train-approximator": ApproxSettings, "report": ReportSettings}
SETTINGS.update({v: ExperimentConfig for v in TASK_VERBS})

HELP = {
    "gen-mmd-corpus": "simulate bundle pairs and label them with the oracle distance",
    "train-approximator": "fit the distance network per level and seed, with diagnostics",
    "gen-task": "build feature tables for a regression task",
    "train": "train the reference ladder and baselines for every seed",
    "evaluate": "recompute train/valid errors and the per-task summary table",
    "oos": "predict on out-of-sample regimes, regular and irregular sampling",
    "report": "collect tables and sweeps into CSV files and report.md",
}
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- verbs ------------------------------------------------------------------------


def _corpus_config(s: CorpusSettings):
    from .approximator import CorpusConfig, OracleConfig

    oracle = OracleConfig(sigma=s.sigma, sigma2=s.sigma2, dyadic_order=s.dyadic_order, lam=s.lam)
    return CorpusConfig(batch=s.batch, n_steps=s.n_steps, zero_fraction=s.zero_fraction, oracle=oracle)


def _progress(label):
    def report(done, total):
        if done % 100 == 0 or done == total:
            log.info("%s: %d/%d rows", label, done, total)

    return report


def run_gen_mmd_corpus(s: CorpusSettings, workdir: FsPath) -> list[FsPath]:
    from .approximator import build_mmd_dataset, corpus_summary, write_corpus, write_json

    rows = build_mmd_dataset(s.rows, s.zero_fraction, _corpus_config(s), s.seed, _progress("corpus"))
    out = workdir / s.out
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(rows, out)
    side = out.with_suffix(".json")
    write_json({"settings": to_dict(s), "summary": corpus_summary(rows)}, side)
    return [out, side]


def _corpus_settings_for(path: FsPath) -> CorpusSettings:
    side = path.with_suffix(".json")
    if side.exists():
        return settings_from(CorpusSettings, json.loads(side.read_text())["settings"])
    log.warning("%s has no settings sidecar; held-out pairs use default oracle settings", path)
    return CorpusSettings()


def run_train_approximator(s: ApproxSettings, workdir: FsPath) -> list[FsPath]:
    from .approximator import (
        HIDDEN_WIDTH,
        build_mmd_dataset,
        corpus_arrays,
        is_zero_row,
        metric_diagnostics,
        oracle_agreement,
        read_corpus,
        train_approximator,
        write_corpus,
    )
    from .neural import TrainConfig
    from .report import APPROX_RUNS_HEADER, TABLE1_HEADER, table1, write_rows

    corpus_path = workdir / s.corpus
    rows = read_corpus(corpus_path)
    if s.drop_zero_rows:
        rows = [r for r in rows if not is_zero_row(r)]
    outdir = workdir / s.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    written, runs, first = [], [], {}
    for level in s.levels:
        X, y = corpus_arrays(rows, level)
        width = HIDDEN_WIDTH.get(level, 60)
        for seed in s.seeds:
            cfg = TrainConfig(s.epochs, s.batch_size, s.lr, weight_decay=s.weight_decay, seed=seed)
            approx, rep = train_approximator(X, y, level, cfg, width)
            path = outdir / f"approx_L{level}_s{seed}.ckpt"
            approx.save(path)
            written.append(path)
            runs.append({"level": level, "width": width, "seed": seed,
                         "train_mse": rep.train_mse, "valid_mse": rep.valid_mse})
            log.info("level %d seed %d: valid mse %.4g", level, seed, rep.valid_mse)
            first.setdefault(level, approx)
        path = outdir / f"approx_L{level}.ckpt"
        first[level].save(path)
        written.append(path)
    written.append(write_rows(outdir / "runs.csv", APPROX_RUNS_HEADER, runs))
    written.append(write_rows(outdir / "table1.csv", TABLE1_HEADER, table1(runs)))

    if s.diagnostics or s.heldout:
        ccfg = _corpus_config(_corpus_settings_for(corpus_path))
        heldout = []
        if s.heldout:
            heldout = build_mmd_dataset(s.heldout, 0.0, ccfg, s.heldout_seed, _progress("held-out"))
            path = outdir / "heldout.csv"
            write_corpus(heldout, path)
            written.append(path)
        diag = []
        for level, approx in first.items():
            row = {"level": level, "trials": s.diagnostics, "pass_fraction": float("nan"),
                   "heldout_pairs": len(heldout), "spearman": float("nan")}
            if s.diagnostics:
                row["pass_fraction"] = metric_diagnostics(approx, s.diagnostics, s.diag_seed, ccfg)
            if heldout:
                row["spearman"] = oracle_agreement(approx, heldout)[0]
            diag.append(row)
        written.append(write_rows(outdir / "diagnostics.csv", list(diag[0]), diag))
    return written


def _approximator(cfg: ExperimentConfig, workdir: FsPath):
    from .tasks import load_approximator

    return load_approximator(cfg, workdir)


def run_gen_task(cfg: ExperimentConfig, workdir: FsPath) -> list[FsPath]:
    from .tasks import generate_task

    result = generate_task(cfg, _approximator(cfg, workdir), workdir / cfg.task)
    written = list(result["outputs"])
    bdir = workdir / cfg.task / "bundles"
    if cfg.save_bundles:
        written += sorted(bdir.glob("*.pb1"))
    return written


def run_train(cfg: ExperimentConfig, workdir: FsPath) -> list[FsPath]:
    from .report import RUNS_HEADER, write_rows
    from .tasks import model_path, train_task

    runs = [{"task": cfg.task, **r} for r in train_task(cfg, workdir / cfg.task)]
    written = [model_path(workdir / cfg.task, r["model"], r["B"], r["seed"]) for r in runs]
    written.append(write_rows(workdir / cfg.task / "train_runs.csv", RUNS_HEADER, runs))
    return written


def run_evaluate(cfg: ExperimentConfig, workdir: FsPath) -> list[FsPath]:
    from .report import RUNS_HEADER, TABLE2_HEADER, write_rows
    from .tasks import evaluate_task, summarize_runs

    runs = [{"task": cfg.task, **r} for r in evaluate_task(cfg, workdir / cfg.task)]
    if not runs:
        raise EmptyResults("no trained models to evaluate")
    return [
        write_rows(workdir / cfg.task / "eval_runs.csv", RUNS_HEADER, runs),
        write_rows(workdir / cfg.task / "table2.csv", TABLE2_HEADER, summarize_runs(cfg.task, runs)),
    ]


def run_oos(cfg: ExperimentConfig, workdir: FsPath) -> list[FsPath]:
    from .report import OOS_HEADER, write_rows
    from .tasks import oos_sweep

    rows = oos_sweep(cfg, workdir / cfg.task, _approximator(cfg, workdir))
    return [write_rows(workdir / cfg.task / "oos.csv", OOS_HEADER, rows)]


def run_report(s: ReportSettings, workdir: FsPath) -> list[FsPath]:
    from .report import emit_report

    return emit_report(workdir, s.outdir)


RUNNERS = {
    "gen-mmd-corpus": run_gen_mmd_corpus,
    "train-approximator": run_train_approximator,
    "gen-task": run_gen_task,
    "train": run_train,
    "evaluate": run_evaluate,
    "oos": run_oos,
    "report": run_report,
}


# --- settings resolution and manifests --------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speedrs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"speedrs {__version__} ({BACKEND} kernels)")
    parser.add_argument("--workdir", default=".", help="root for every relative input and output path")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    for verb in VERBS:
        p = sub.add_parser(verb, help=HELP[verb])
        p.add_argument("--config", help="plain-text file of 'key = value' lines")
        p.add_argument("--from-manifest", help="rerun with the settings recorded in a manifest")
        if verb != "report":
            p.add_argument("--paper-scale", action="store_true", help="full-size datasets (hours of compute)")
        group = p.add_argument_group("settings (override the config file)")
        for f in fields(SETTINGS[verb]):
            group.add_argument(_flag(f.name), dest=f"set_{f.name}", metavar="VALUE", default=None)
    return parser


def resolve_settings(verb: str, args) -> object:
    """Defaults, then paper scale, then manifest, then config file, then flags."""
    cls = SETTINGS[verb]
    values: dict = {}
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}
    task = flags.get("task")
    if args.from_manifest:
        manifest = json.loads(FsPath(args.from_manifest).read_text())
        if manifest.get("verb") != verb:
            raise ConfigError(f"manifest records verb {manifest.get('verb')!r}, not {verb!r}")
        values.update(manifest["settings"])
    if args.config:
        text = FsPath(args.config).read_text()
        values.update(parse_config_text(text))
    values.update(flags)
    if cls is ExperimentConfig:
        task = values.get("task") or task or "pricing"
        if getattr(args, "paper_scale", False) and not args.from_manifest:
            values = {**PAPER_SCALE.get(task, {}), **values}
        return make_config(task, values)
    if getattr(args, "paper_scale", False) and not args.from_manifest and verb == "gen-mmd-corpus":
        values = {**PAPER_SCALE["corpus"], **values}
    return settings_from(cls, values)


def manifest_path(workdir: FsPath, verb: str, settings) -> FsPath:
    name = f"{verb}-{settings.task}" if isinstance(settings, ExperimentConfig) else verb
    return workdir / "manifests" / f"{name}.json"


def write_manifest(workdir: FsPath, verb: str, settings, outputs: list[FsPath]) -> FsPath:
    payload = to_dict(settings)
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
    manifest = {
        "verb": verb,
        "settings": payload,
        "config_digest": digest,
        "threads": threads(),
        "backend": BACKEND,
        "version": __version__,
        "outputs": {str(FsPath(p).relative_to(workdir)): sha256_file(p) for p in sorted(set(map(FsPath, outputs)))},
    }
    path = manifest_path(workdir, verb, settings)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def compare_manifest(old: dict, workdir: FsPath) -> list[str]:
    """Recorded outputs whose current contents differ from the manifest."""
    bad = []
    for rel, digest in sorted(old.get("outputs", {}).items()):
        p = workdir / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def execute(verb: str, settings, workdir: FsPath) -> FsPath:
    if isinstance(settings, ExperimentConfig):
        big = settings.n_rows > PAPER_SCALE[settings.task]["n_rows"] // 2
    else:
        big = verb == "gen-mmd-corpus" and settings.rows > PAPER_SCALE["corpus"]["rows"] // 4
    if big:
        log.warning("full-size run: expect %s", PAPER_SCALE_HOURS.get(verb, "several hours"))
    outputs = RUNNERS[verb](settings, workdir)
    return write_manifest(workdir, verb, settings, outputs)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    workdir = FsPath(args.workdir)
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        settings = resolve_settings(args.verb, args)
        old = json.loads(FsPath(args.from_manifest).read_text()) if args.from_manifest else None
        path = execute(args.verb, settings, workdir)
        print(f"wrote {path.relative_to(workdir)}")
        if old is not None:
            bad = compare_manifest(old, workdir)
            if bad:
                print("outputs differ from manifest: " + ", ".join(bad), file=sys.stderr)
            else:
                print(f"reproduced {len(old.get('outputs', {}))} outputs byte for byte")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalOverflow, SingularSystem, NonFiniteLoss) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, EmptyResults) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SpeedrsError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
