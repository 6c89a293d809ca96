"""Discrete paths, bundles of sample paths and the PB1 bundle file format.

A :class:`Path` is a strictly increasing time grid together with a
``(len, d)`` value matrix.  Paths are treated as immutable: every operation
returns a new object and never writes into its input arrays.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    EmptyBundle,
    IndexOutOfRange,
    ShapeMismatch,
    TooFewPoints,
    WindowTooShort,
    ZeroInitialValue,
)

PB1_MAGIC = b"SPDR"
PB1_VERSION = 1
_PB1_HEADER = struct.Struct("<4sIIIIQ")


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2:
            raise ShapeMismatch("times must be 1-d and values 2-d")
        if len(times) < 2:
            raise TooFewPoints(f"a path needs at least 2 points, got {len(times)}")
        if values.shape[0] != len(times):
            raise ShapeMismatch(
                f"{values.shape[0]} value rows for {len(times)} time stamps"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("path entries must be finite")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time stamps must be strictly increasing")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        return f"Path(len={len(self)}, dim={self.dim}, t=[{self.times[0]:g}, {self.times[-1]:g}])"


def augment_time(p: Path) -> Path:
    """Prepend the time stamps as coordinate 0. Not idempotent."""
    return Path(p.times, np.column_stack([p.times, p.values]))


def normalize_start(p: Path, target: float = 1.0, skip_time: bool = False) -> Path:
    """Rescale each value coordinate so that it starts at ``target``.

    With ``skip_time`` the first column is treated as a time coordinate and
    left untouched.
    """
    values = p.values
    first = 1 if skip_time else 0
    start = values[0, first:]
    if np.any(start == 0):
        raise ZeroInitialValue("cannot normalise a coordinate that starts at 0")
    out = values.copy()
    out[:, first:] = values[:, first:] / start * target
    return Path(p.times, out)


def subsample_irregular(
    p: Path,
    keep: Iterable[int] | None = None,
    *,
    keep_prob: float | None = None,
    seed: int | None = None,
) -> Path:
    """Keep a subsequence of rows, preserving the original time stamps.

    Either pass explicit ``keep`` indices, or ``keep_prob`` with a ``seed``;
    in the random case the first and last rows are always kept.
    """
    n = len(p)
    if keep is None:
        if keep_prob is None:
            raise ValueError("pass keep indices or keep_prob")
        rng = np.random.default_rng(seed)
        mask = rng.random(n) < keep_prob
        mask[0] = mask[-1] = True
        idx = np.flatnonzero(mask)
    else:
        idx = np.unique(np.asarray(list(keep), dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= n):
            raise IndexOutOfRange("subsample index outside the path")
    if idx.size < 2:
        raise TooFewPoints("subsampled path would have fewer than 2 points")
    return Path(p.times[idx], p.values[idx])


def restrict_window(p: Path, t: float) -> Path:
    """Restrict ``p`` to ``[t0, t]``, interpolating a final point if needed."""
    times = p.times
    if t < times[1]:
        raise WindowTooShort(f"window end {t} precedes the second stamp {times[1]}")
    if t >= times[-1]:
        return p
    k = int(np.searchsorted(times, t, side="right"))  # times[k-1] <= t < times[k]
    if times[k - 1] == t:
        return Path(times[:k], p.values[:k])
    w = (t - times[k - 1]) / (times[k] - times[k - 1])
    last = (1.0 - w) * p.values[k - 1] + w * p.values[k]
    return Path(np.append(times[:k], t), np.vstack([p.values[:k], last]))


def marginal(p: Path, j: int) -> Path:
    if not 0 <= j < p.dim:
        raise IndexOutOfRange(f"coordinate {j} outside dimension {p.dim}")
    return Path(p.times, p.values[:, j : j + 1])


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Sample paths from one law, plus the spec/seed that produced them."""

    paths: tuple
    seed: int = 0
    spec: dict[str, Any] | None = field(default=None)

    def __post_init__(self):
        paths = tuple(self.paths)
        if not paths:
            raise EmptyBundle("a bundle needs at least one path")
        dim = paths[0].dim
        if any(q.dim != dim for q in paths):
            raise ShapeMismatch("all paths in a bundle must share a dimension")
        object.__setattr__(self, "paths", paths)

    @classmethod
    def from_arrays(cls, times, values, seed=0, spec=None) -> "PathBundle":
        """Build from a shared 1-d time grid (or per-path grids) and (n, len, d) values."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        times = np.asarray(times, dtype=np.float64)
        if times.ndim == 1:
            paths = [Path(times, v) for v in values]
        else:
            paths = [Path(t, v) for t, v in zip(times, values)]
        return cls(tuple(paths), seed=seed, spec=spec)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]

    @property
    def dim(self) -> int:
        return self.paths[0].dim

    @property
    def is_uniform(self) -> bool:
        t0 = self.paths[0].times
        return all(len(q) == len(t0) and np.array_equal(q.times, t0) for q in self.paths)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Shared time grid and (n, len, d) values; requires a uniform bundle."""
        if not self.is_uniform:
            raise ShapeMismatch("bundle paths do not share a time grid")
        return self.paths[0].times, np.stack([q.values for q in self.paths])

    def map(self, fn) -> "PathBundle":
        return PathBundle(tuple(fn(q) for q in self.paths), seed=self.seed, spec=self.spec)


def write_pb1(bundle: PathBundle, path: str | FsPath) -> None:
    """Write a uniform-length bundle as PB1 plus a one-line JSON sidecar."""
    path = FsPath(path)
    lengths = {len(q) for q in bundle}
    if len(lengths) != 1:
        raise ShapeMismatch("PB1 requires uniform path length")
    (length,) = lengths
    header = _PB1_HEADER.pack(
        PB1_MAGIC, PB1_VERSION, len(bundle), length, bundle.dim, int(bundle.seed)
    )
    body = np.stack([np.column_stack([q.times, q.values]) for q in bundle])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.astype("<f8").tobytes())
    with open(_sidecar(path), "w") as fh:
        fh.write(json.dumps(bundle.spec, sort_keys=True) + "\n")


def read_pb1(path: str | FsPath) -> PathBundle:
    path = FsPath(path)
    raw = path.read_bytes()
    magic, version, n_paths, length, dim, seed = _PB1_HEADER.unpack_from(raw)
    if magic != PB1_MAGIC:
        raise ValueError(f"{path}: not a PB1 file")
    if version != PB1_VERSION:
        raise ValueError(f"{path}: unsupported PB1 version {version}")
    count = n_paths * length * (dim + 1)
    body = np.frombuffer(raw, dtype="<f8", count=count, offset=_PB1_HEADER.size)
    body = body.reshape(n_paths, length, dim + 1)
    spec = None
    side = _sidecar(path)
    if side.exists():
        spec = json.loads(side.read_text().splitlines()[0])
    paths = tuple(Path(b[:, 0].copy(), b[:, 1:].copy()) for b in body)
    return PathBundle(paths, seed=seed, spec=spec)


def _sidecar(path: FsPath) -> FsPath:
    return path.with_name(path.name + ".json")


def group_by_length(paths: Sequence[Path]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, q in enumerate(paths):
        groups.setdefault(len(q), []).append(i)
    return groups
