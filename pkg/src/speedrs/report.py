"""CSV tables and the markdown summary built from finished runs."""
from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath

import numpy as np

from .config import TASKS
from .errors import EmptyResults

TABLE1_HEADER = ["level", "width", "train_mse", "train_sd", "valid_mse", "valid_sd"]
TABLE2_HEADER = ["task", "model", "B", "width", "train_mse", "train_sd", "valid_mse", "valid_sd"]
RUNS_HEADER = ["task", "model", "B", "width", "seed", "train_mse", "valid_mse"]
APPROX_RUNS_HEADER = ["level", "width", "seed", "train_mse", "valid_mse"]
OOS_HEADER = ["experiment", "sampling", "sweep_var", "sweep_value", "model", "prediction", "target"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header: list[str], rows: list[dict]) -> FsPath:
    """Fixed column order, ``repr`` floats, LF line endings."""
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sd(a: np.ndarray) -> float:
    return float(a.std(ddof=1)) if len(a) > 1 else 0.0


def table1(runs: list[dict]) -> list[dict]:
    """Approximator runs reduced to mean and sample SD per level."""
    out = []
    for level in sorted({int(r["level"]) for r in runs}):
        sel = [r for r in runs if int(r["level"]) == level]
        tr = np.array([float(r["train_mse"]) for r in sel])
        va = np.array([float(r["valid_mse"]) for r in sel])
        out.append({
            "level": level, "width": int(sel[0]["width"]),
            "train_mse": float(tr.mean()), "train_sd": _sd(tr),
            "valid_mse": float(va.mean()), "valid_sd": _sd(va),
        })
    return out


def oos_errors(rows: list[dict]) -> list[dict]:
    """MSE of the averaged predictions per (experiment, sampling, model)."""
    groups: dict = {}
    for r in rows:
        key = (r["experiment"], r["sampling"], r["model"])
        groups.setdefault(key, []).append(float(r["prediction"]) - float(r["target"]))
    return [
        {"experiment": e, "sampling": s, "model": m, "mse": float(np.mean(np.square(d))), "points": len(d)}
        for (e, s, m), d in sorted(groups.items())
    ]


def _cell(v) -> str:
    text = str(v)
    try:
        int(text)
        return text
    except ValueError:
        pass
    try:
        return f"{float(text):.4g}"
    except ValueError:
        return text


def _md_table(header: list[str], rows: list[dict]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_cell(r[k]) for k in header) + " |" for r in rows]
    return lines


def emit_report(workdir, outdir="report") -> list[FsPath]:
    """Collect finished results under ``workdir`` into ``outdir``.

    Raises EmptyResults (and writes nothing) when no run has produced a table.
    """
    workdir = FsPath(workdir)
    found = {}
    t1 = workdir / "approximator" / "runs.csv"
    if t1.exists():
        found["table1"] = table1(read_rows(t1))
    t2, oos, noise = [], {}, {}
    for task in TASKS:
        p = workdir / task / "table2.csv"
        if p.exists():
            t2.extend(read_rows(p))
        p = workdir / task / "oos.csv"
        if p.exists():
            oos[task] = read_rows(p)
        p = workdir / task / "label_noise.json"
        if p.exists() and (workdir / task / "table2.csv").exists():
            noise[task] = json.loads(p.read_text())
    if not found and not t2 and not oos:
        raise EmptyResults(f"no results under {workdir}; run train-approximator, evaluate or oos first")

    outdir = workdir / outdir
    written = []
    md = ["# Results", ""]
    if "table1" in found:
        written.append(write_rows(outdir / "table1.csv", TABLE1_HEADER, found["table1"]))
        md += ["## Approximator validation (mean and SD over seeds)", ""]
        md += _md_table(TABLE1_HEADER, found["table1"]) + [""]
    if t2:
        written.append(write_rows(outdir / "table2.csv", TABLE2_HEADER, t2))
        md += ["## Task models (mean and SD over seeds)", ""]
        md += _md_table(TABLE2_HEADER, t2) + [""]
        if noise:
            md += ["Label noise (variance of the Monte Carlo targets, zero for exact labels):", ""]
            for task, n in sorted(noise.items()):
                md.append(f"- {task}: mean label variance {n['mean_label_variance']:.3g}")
            md.append("")
    for task, rows in sorted(oos.items()):
        written.append(write_rows(outdir / f"oos_{task}.csv", OOS_HEADER, rows))
        errs = oos_errors(rows)
        md += [f"## Out-of-sample sweeps: {task}", ""]
        md += _md_table(["experiment", "sampling", "model", "mse", "points"], errs) + [""]
    path = outdir / "report.md"
    path.write_text("\n".join(md))
    written.append(path)
    return written
