"""Reference sets, distance-to-reference features and the downstream regressor.

A bundle is described by its distances to a fixed collection of reference
models, one block of references per coordinate (marginal) of the bundle.
SPEEDRS distances come from the neural MMD approximator applied to expected
signatures; the baselines use a pointwise kernel on flattened sample paths.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .approximator import MmdApproximator
from .errors import ConfigError, DimMismatch, IndivisibleCount, LengthMismatch
from .neural import (
    Mlp,
    MlpSpec,
    Standardizer,
    TrainConfig,
    mlp_forward,
    mlp_init,
    mlp_train,
    split_dataset,
    standardize_fit,
)
from .paths import PathBundle, marginal
from .signature import expected_signature, expected_signature_arrays
from .sim import SimGrid, derive_seed, make_rng, sample_params, simulate_array, spec_from_dict, spec_json

REF_CLASSES = ("RBergomi", "MeanReverting", "GBM")
REF_RATIO = (2, 2, 1)


def class_counts(total: int, ratio=REF_RATIO) -> list[int]:
    """Split ``total`` by ``ratio`` with largest-remainder rounding (ties to the first class)."""
    ratio = np.asarray(ratio, dtype=float)
    exact = total * ratio / ratio.sum()
    counts = np.floor(exact).astype(int)
    order = sorted(range(len(ratio)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


@dataclass
class ReferenceSet:
    id: int
    marginal: int
    kind: str
    spec: str  # compact JSON
    seed: int
    rank: int  # position among references of its class for this marginal
    expected_sig: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)  # (baseline_batch, len), start-normalised

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(self.expected_sig.astype("<f8").tobytes())
        h.update(self.samples.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def manifest_entry(self) -> dict:
        return {
            "id": self.id, "marginal": self.marginal, "kind": self.kind, "spec": json.loads(self.spec),
            "seed": self.seed, "rank": self.rank, "digest": self.digest(),
        }


def build_reference_sets(
    B_total: int,
    d: int,
    seed: int,
    grid: SimGrid,
    level: int = 3,
    batch: int = 400,
    baseline_batch: int = 80,
) -> list[ReferenceSet]:
    """``B_total / d`` references per marginal, split 2:2:1 over rBergomi, mean reverting and GBM."""
    if d < 1 or B_total % d:
        raise IndivisibleCount(f"{B_total} reference sets cannot be split evenly over {d} marginals")
    per = B_total // d
    if per < 1:
        raise IndivisibleCount("need at least one reference set per marginal")
    refs = []
    for j in range(d):
        kinds = [k for k, c in zip(REF_CLASSES, class_counts(per)) for _ in range(c)]
        ranks = {}
        for kind in kinds:
            rank = ranks.get(kind, 0)
            ranks[kind] = rank + 1
            refs.append(_make_ref(len(refs), j, kind, rank, seed, grid, level, batch, baseline_batch))
    return refs


def _make_ref(idx, j, kind, rank, seed, grid, level, batch, baseline_batch) -> ReferenceSet:
    ref_seed = derive_seed(seed, j, REF_CLASSES.index(kind), rank)
    spec = sample_params(kind, make_rng(derive_seed(ref_seed, 0)))
    values = simulate_array(spec, grid, max(batch, baseline_batch), derive_seed(ref_seed, 1))
    sig = expected_signature_arrays(values[:batch], grid.times, level)
    samples = values[:baseline_batch] / values[:baseline_batch, :1]
    return ReferenceSet(idx, j, kind, spec_json(spec), ref_seed, rank, sig, samples)


def nested_subset(refs: list[ReferenceSet], B: int) -> list[int]:
    """Indices of a smaller 2:2:1 ladder rung inside ``refs`` (first ranks of each class)."""
    d = len({r.marginal for r in refs})
    if B % d:
        raise IndivisibleCount(f"{B} reference sets cannot be split evenly over {d} marginals")
    want = dict(zip(REF_CLASSES, class_counts(B // d)))
    out = [i for i, r in enumerate(refs) if r.rank < want[r.kind]]
    if len(out) != B:
        raise IndivisibleCount(f"reference pool too small for a rung of {B}")
    return out


def refs_manifest(refs: list[ReferenceSet], **extra) -> dict:
    return {**extra, "references": [r.manifest_entry() for r in refs]}


def rebuild_reference(entry: dict, grid: SimGrid, level: int, batch: int, baseline_batch: int) -> ReferenceSet:
    """Recreate one cached reference from its manifest entry (spec and seed alone)."""
    spec = spec_from_dict(entry["spec"])
    values = simulate_array(spec, grid, max(batch, baseline_batch), derive_seed(entry["seed"], 1))
    sig = expected_signature_arrays(values[:batch], grid.times, level)
    samples = values[:baseline_batch] / values[:baseline_batch, :1]
    return ReferenceSet(
        entry["id"], entry["marginal"], entry["kind"], spec_json(spec), entry["seed"], entry["rank"], sig, samples
    )


# --- featurisers -----------------------------------------------------------------


def _as_stack(bundle):
    """(times, values (n, len, d)) for uniform input, else None."""
    if isinstance(bundle, PathBundle):
        if not bundle.is_uniform:
            return None
        times, values = bundle.stacked()
        return times, values
    times, values = bundle
    values = np.asarray(values, dtype=float)
    return np.asarray(times, dtype=float), values[:, :, None] if values.ndim == 2 else values


def bundle_expected_sigs(bundle, d: int, level: int) -> np.ndarray:
    """(d, sig_length) expected signatures of each marginal of ``bundle``."""
    stack = _as_stack(bundle)
    if stack is not None:
        times, values = stack
        if values.shape[2] != d:
            raise DimMismatch(f"bundle has dimension {values.shape[2]}, references cover {d}")
        return np.stack([expected_signature_arrays(values[:, :, j], times, level) for j in range(d)])
    if bundle.dim != d:
        raise DimMismatch(f"bundle has dimension {bundle.dim}, references cover {d}")
    return np.stack([expected_signature(bundle.map(lambda p, j=j: marginal(p, j)), level) for j in range(d)])


@dataclass
class SpeedrsFeaturizer:
    refs: list[ReferenceSet]
    approximator: MmdApproximator

    def __post_init__(self):
        self.d = len({r.marginal for r in self.refs})
        self._ref_sigs = np.stack([r.expected_sig for r in self.refs])
        self._marg = np.array([r.marginal for r in self.refs])

    def __call__(self, bundle) -> np.ndarray:
        sigs = bundle_expected_sigs(bundle, self.d, self.approximator.level)
        return self.approximator.distances(sigs[self._marg], self._ref_sigs)


def features_speedrs(bundle, refs: list[ReferenceSet], approximator: MmdApproximator) -> np.ndarray:
    return SpeedrsFeaturizer(refs, approximator)(bundle)


def rbf_gram(x, y, sigma=1.0):
    sq = np.sum(x**2, 1)[:, None] + np.sum(y**2, 1)[None, :] - 2.0 * x @ y.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma**2))


def matern32_gram(x, y, sigma=1.0):
    sq = np.sum(x**2, 1)[:, None] + np.sum(y**2, 1)[None, :] - 2.0 * x @ y.T
    r = np.sqrt(3.0 * np.maximum(sq, 0.0)) / sigma
    return (1.0 + r) * np.exp(-r)


POINTWISE_KERNELS = {"rbf": rbf_gram, "matern32": matern32_gram}
MMD_FORMS = ("as_printed", "standard_biased")


def flatten_bundle(bundle) -> np.ndarray:
    """Start-normalised paths flattened to one row per (path, coordinate)."""
    stack = _as_stack(bundle)
    if stack is None:
        raise LengthMismatch("pointwise kernels need paths of one common length")
    _, values = stack
    values = values / values[:, :1, :]
    return np.ascontiguousarray(np.moveaxis(values, 2, 1).reshape(-1, values.shape[1]))


@dataclass
class PointwiseFeaturizer:
    refs: list[ReferenceSet]
    kernel: str = "rbf"
    sigma: float = 1.0
    form: str = "as_printed"

    def __post_init__(self):
        if self.kernel not in POINTWISE_KERNELS:
            raise ConfigError(f"unknown baseline kernel {self.kernel!r}")
        if self.form not in MMD_FORMS:
            raise ConfigError(f"unknown baseline form {self.form!r}")
        gram = POINTWISE_KERNELS[self.kernel]
        self._gram = lambda a, b: gram(a, b, self.sigma)
        self._zz = np.array([self._gram(r.samples, r.samples).sum() for r in self.refs])
        self._length = self.refs[0].samples.shape[1]

    def __call__(self, bundle) -> np.ndarray:
        X = flatten_bundle(bundle)
        if X.shape[1] != self._length:
            raise LengthMismatch(f"bundle paths have length {X.shape[1]}, references {self._length}")
        n = X.shape[0]
        xx = self._gram(X, X).sum()
        out = np.empty(len(self.refs))
        for k, ref in enumerate(self.refs):
            m = ref.samples.shape[0]
            xz = self._gram(X, ref.samples).sum()
            if self.form == "as_printed":
                out[k] = xx / n - 2.0 * xz / (n * m) + self._zz[k] / m
            else:
                out[k] = xx / n**2 - 2.0 * xz / (n * m) + self._zz[k] / m**2
        return out


def features_pointwise(bundle, refs, kernel="rbf", sigma=1.0, form="as_printed") -> np.ndarray:
    return PointwiseFeaturizer(refs, kernel, sigma, form)(bundle)


# --- feature tables and the regressor ---------------------------------------------


@dataclass
class FeatureTable:
    X: np.ndarray
    y: np.ndarray
    specs: list
    seeds: list

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if len(self.X) != len(self.y) or len(self.specs) != len(self.y) or len(self.seeds) != len(self.y):
            raise LengthMismatch("feature table columns have different lengths")
        if not np.all(np.isfinite(self.X)):
            raise ConfigError("feature table has non-finite entries")

    def __len__(self) -> int:
        return len(self.y)

    def columns(self, idx) -> "FeatureTable":
        return FeatureTable(self.X[:, idx], self.y, self.specs, self.seeds)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"ref_{i}" for i in range(self.X.shape[1])] + ["target", "spec", "seed"])
            for x, t, s, sd in zip(self.X, self.y, self.specs, self.seeds):
                w.writerow([repr(float(v)) for v in x] + [repr(float(t)), s, sd])

    @classmethod
    def read_csv(cls, path) -> "FeatureTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            k = header.index("target")
            X, y, specs, seeds = [], [], [], []
            for rec in reader:
                X.append([float(v) for v in rec[:k]])
                y.append(float(rec[k]))
                specs.append(rec[k + 1])
                seeds.append(int(rec[k + 2]))
        return cls(np.array(X).reshape(len(y), k), np.array(y), specs, seeds)


@dataclass
class Regressor:
    model: Mlp
    standardizer: Standardizer

    def predict(self, X) -> np.ndarray:
        return mlp_forward(self.model, self.standardizer.apply(np.atleast_2d(X)))


def train_regressor(table: FeatureTable, width: int, cfg: TrainConfig, activation: str = "relu"):
    """Standardise on the training split, fit, and report train/valid MSE."""
    if len(table) < 2:
        raise ConfigError("need at least two rows to train")
    tr, va = split_dataset(len(table), cfg.split_ratio, cfg.seed)
    std = standardize_fit(table.X[tr])
    model = mlp_init(MlpSpec(table.X.shape[1], width, activation), cfg.seed)
    model, hist = mlp_train(
        model, (std.apply(table.X[tr]), table.y[tr]), cfg, (std.apply(table.X[va]), table.y[va])
    )
    metrics = {"train_mse": hist["train_mse"][-1], "valid_mse": hist["valid_mse"][-1]}
    return Regressor(model, std), metrics


def predict(reg: Regressor, featurizer, bundle) -> float:
    return float(reg.predict(featurizer(bundle))[0])
