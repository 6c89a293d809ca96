"""Neural stand-in for the 2nd-order MMD, fed with pairs of expected signatures.

The corpus pairs two simulated bundles per row. Features are the two
expected signatures side by side; the target is the oracle 2nd-order MMD
clamped at zero. A share of rows pair two independent bundles of one model
with target exactly 0, which teaches the network that sampling noise alone
is no distance.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np
from scipy.stats import spearmanr

from .errors import ConfigError, DimMismatch
from .mmd import mmd2_unbiased
from .neural import (
    Mlp,
    MlpSpec,
    Standardizer,
    TrainConfig,
    load_checkpoint,
    mlp_forward,
    mlp_init,
    mlp_train,
    save_checkpoint,
    split_dataset,
    standardize_fit,
)
from .paths import Path
from .pool import run_rows
from .sigkernel import GoursatConfig, StaticKernel
from .signature import expected_signature_arrays, sig_length
from .sim import SimGrid, derive_seed, make_rng, sample_params, simulate_array, spec_json

BASE_CLASSES = ("GBM", "MeanReverting", "RBergomi")
HIDDEN_WIDTH = {2: 25, 3: 60, 4: 90}
STORED_LEVEL = 4


@dataclass(frozen=True)
class OracleConfig:
    sigma: float = 0.5
    sigma2: float = 1.0
    dyadic_order: int = 1
    scheme: str = "second"
    lam: float = 1e-3

    def distance(self, a: np.ndarray, b: np.ndarray, times: np.ndarray) -> float:
        """Unbiased 2nd-order MMD between two (n, len) value stacks."""
        return mmd2_unbiased(
            oracle_paths(a, times),
            oracle_paths(b, times),
            StaticKernel("rbf", self.sigma),
            GoursatConfig(self.dyadic_order, self.scheme),
            self.lam,
            StaticKernel("rbf", self.sigma2),
        )


def oracle_paths(values: np.ndarray, times: np.ndarray) -> list[Path]:
    """Start-normalised, time-augmented paths from an (n, len) stack."""
    values = np.asarray(values, dtype=float)
    scaled = values / values[:, :1]
    return [Path(times, np.column_stack([times, v])) for v in scaled]


@dataclass(frozen=True)
class CorpusConfig:
    batch: int = 100
    n_steps: int = 14
    T: float = 1.0
    zero_fraction: float = 0.25
    classes: tuple = BASE_CLASSES
    oracle: OracleConfig = field(default_factory=OracleConfig)

    @property
    def grid(self) -> SimGrid:
        return SimGrid(self.T, self.n_steps)


@dataclass
class MmdRow:
    feature: np.ndarray  # two expected signatures at STORED_LEVEL
    target: float
    spec_a: str
    spec_b: str
    seed: int


def features_at_level(stored: np.ndarray, level: int, dim: int = 2) -> np.ndarray:
    """Slice pair features stored at a higher level down to ``level``."""
    stored = np.atleast_2d(stored)
    full = stored.shape[1] // 2
    keep = sig_length(dim, level)
    if keep > full:
        raise DimMismatch(f"stored features only reach length {full} per side")
    return np.concatenate([stored[:, :keep], stored[:, full : full + keep]], axis=1)


def _sides(cfg: CorpusConfig, row_seed: int, zero: bool):
    rng = make_rng(derive_seed(row_seed, 0))
    kind_a = cfg.classes[rng.integers(len(cfg.classes))]
    spec_a = sample_params(kind_a, rng)
    if zero:
        spec_b = spec_a
    else:
        spec_b = sample_params(cfg.classes[rng.integers(len(cfg.classes))], rng)
    grid = cfg.grid
    a = simulate_array(spec_a, grid, cfg.batch, derive_seed(row_seed, 1))
    b = simulate_array(spec_b, grid, cfg.batch, derive_seed(row_seed, 2))
    return spec_a, spec_b, a, b


def make_row(cfg: CorpusConfig, row_seed: int, zero: bool) -> MmdRow:
    spec_a, spec_b, a, b = _sides(cfg, row_seed, zero)
    times = cfg.grid.times
    feat = np.concatenate(
        [
            expected_signature_arrays(a, times, STORED_LEVEL),
            expected_signature_arrays(b, times, STORED_LEVEL),
        ]
    )
    target = 0.0 if zero else max(0.0, cfg.oracle.distance(a, b, times))
    return MmdRow(feat, float(target), spec_json(spec_a), spec_json(spec_b), int(row_seed))


def is_zero_row(row: MmdRow) -> bool:
    return row.spec_a == row.spec_b and row.target == 0.0


def zero_mask(n_rows: int, zero_fraction: float, seed: int) -> np.ndarray:
    n_zero = int(round(zero_fraction * n_rows))
    return np.random.default_rng(seed).permutation(n_rows) < n_zero


def build_mmd_dataset(
    n_rows: int, zero_fraction: float, cfg: CorpusConfig, seed: int, progress=None
) -> list[MmdRow]:
    """Corpus of ``n_rows`` rows; ``round(zero_fraction * n_rows)`` are zero rows."""
    if n_rows < 10:
        raise ConfigError("corpus needs at least 10 rows")
    if not 0.0 <= zero_fraction < 1.0:
        raise ConfigError("zero_fraction must lie in [0, 1)")
    mask = zero_mask(n_rows, zero_fraction, derive_seed(seed, 0))

    def one(r):
        row = make_row(cfg, derive_seed(seed, 1, r), bool(mask[r]))
        if progress is not None:
            progress(r + 1, n_rows)
        return row

    return run_rows(one, n_rows)


def corpus_header(n_features: int) -> list[str]:
    return [f"f_{i}" for i in range(n_features)] + ["target", "spec_a", "spec_b", "seed"]


def write_corpus(rows: list[MmdRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(corpus_header(len(rows[0].feature)))
        for row in rows:
            w.writerow([repr(float(v)) for v in row.feature] + [repr(row.target), row.spec_a, row.spec_b, row.seed])


def read_corpus(path) -> list[MmdRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = header.index("target")
        rows = []
        for rec in reader:
            rows.append(
                MmdRow(np.array([float(v) for v in rec[:k]]), float(rec[k]), rec[k + 1], rec[k + 2], int(rec[k + 3]))
            )
    return rows


def corpus_arrays(rows: list[MmdRow], level: int) -> tuple[np.ndarray, np.ndarray]:
    X = features_at_level(np.stack([r.feature for r in rows]), level)
    y = np.array([r.target for r in rows])
    return X, y


# --- the approximator ------------------------------------------------------------


@dataclass
class MmdApproximator:
    model: Mlp
    standardizer: Standardizer
    level: int
    symmetrize: bool = True
    clamp: bool = True

    @property
    def side_length(self) -> int:
        return sig_length(2, self.level)

    def raw(self, pairs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.model, self.standardizer.apply(np.atleast_2d(pairs)))

    def distances(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Row-wise distances between two (n, side_length) arrays of expected signatures."""
        left, right = np.atleast_2d(left), np.atleast_2d(right)
        k = self.side_length
        if left.shape[1] != k or right.shape[1] != k:
            raise DimMismatch(f"expected signatures must have length {k}")
        left, right = np.broadcast_arrays(left, right)
        out = self.raw(np.hstack([left, right]))
        if self.symmetrize:
            out = 0.5 * (out + self.raw(np.hstack([right, left])))
        if self.clamp:
            out = np.maximum(out, 0.0)
        return out

    def save(self, path) -> None:
        save_checkpoint(
            path, self.model, self.standardizer,
            level=self.level, symmetrize=self.symmetrize, clamp=self.clamp,
        )

    @classmethod
    def load(cls, path) -> "MmdApproximator":
        model, std, meta = load_checkpoint(path)
        return cls(model, std, int(meta["level"]), bool(meta["symmetrize"]), bool(meta["clamp"]))


def approx_distance(m: MmdApproximator, sig_a: np.ndarray, sig_b: np.ndarray) -> float:
    return float(m.distances(sig_a, sig_b)[0])


@dataclass
class ApproxReport:
    train_mse: float
    valid_mse: float
    history: dict


def train_approximator(
    X: np.ndarray, y: np.ndarray, level: int, cfg: TrainConfig, width: int | None = None
) -> tuple[MmdApproximator, ApproxReport]:
    """Standardise, split 80:20 and fit the MLP; the split and init follow ``cfg.seed``."""
    if X.shape[1] != 2 * sig_length(2, level):
        raise DimMismatch(f"features of length {X.shape[1]} do not match level {level}")
    width = width or HIDDEN_WIDTH.get(level, 60)
    tr, va = split_dataset(len(y), cfg.split_ratio, cfg.seed)
    std = standardize_fit(X[tr])
    model = mlp_init(MlpSpec(X.shape[1], width, "relu"), cfg.seed)
    model, hist = mlp_train(model, (std.apply(X[tr]), y[tr]), cfg, (std.apply(X[va]), y[va]))
    approx = MmdApproximator(model, std, level)
    return approx, ApproxReport(hist["train_mse"][-1], hist["valid_mse"][-1], hist)


def metric_diagnostics(
    m: MmdApproximator, n_tests: int, seed: int, cfg: CorpusConfig = CorpusConfig(), threshold: float = 0.1
) -> float:
    """Share of trials where two independent bundles of one model score below ``threshold``."""
    grid = cfg.grid
    hits = 0
    for t in range(n_tests):
        rng = make_rng(derive_seed(seed, t, 0))
        spec = sample_params(cfg.classes[rng.integers(len(cfg.classes))], rng)
        a = simulate_array(spec, grid, cfg.batch, derive_seed(seed, t, 1))
        b = simulate_array(spec, grid, cfg.batch, derive_seed(seed, t, 2))
        sa = expected_signature_arrays(a, grid.times, m.level)
        sb = expected_signature_arrays(b, grid.times, m.level)
        hits += approx_distance(m, sa, sb) < threshold
    return hits / n_tests


def oracle_agreement(m: MmdApproximator, rows: list[MmdRow]) -> tuple[float, np.ndarray, np.ndarray]:
    """Spearman correlation between stored oracle targets and approximator distances."""
    X, y = corpus_arrays(rows, m.level)
    k = m.side_length
    pred = m.distances(X[:, :k], X[:, k:])
    rho = float(spearmanr(y, pred).statistic)
    return rho, y, pred


def corpus_summary(rows: list[MmdRow]) -> dict:
    y = np.array([r.target for r in rows])
    zero = np.array([is_zero_row(r) for r in rows])
    return {
        "rows": len(rows),
        "zero_rows": int(zero.sum()),
        "target_mean": float(y.mean()),
        "target_median": float(np.median(y)),
        "target_max": float(y.max()),
        "share_below_0.1": float(np.mean(y < 0.1)),
    }


def write_json(obj, path) -> None:
    FsPath(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def corpus_digest(n_rows: int, zero_fraction: float, cfg: CorpusConfig, seed: int) -> str:
    """Short content key for caching a corpus built with these settings."""
    key = json.dumps(
        {"n_rows": n_rows, "zero_fraction": zero_fraction, "cfg": asdict(cfg), "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha1(key.encode()).hexdigest()[:12]


def cached_corpus(directory, n_rows: int, zero_fraction: float, cfg: CorpusConfig, seed: int) -> list[MmdRow]:
    """Load a corpus from ``directory`` if present, otherwise build and store it."""
    directory = FsPath(directory)
    path = directory / f"mmd_corpus_{corpus_digest(n_rows, zero_fraction, cfg, seed)}.csv"
    if path.exists():
        return read_corpus(path)
    rows = build_mmd_dataset(n_rows, zero_fraction, cfg, seed)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    write_corpus(rows, tmp)
    tmp.replace(path)
    return rows
