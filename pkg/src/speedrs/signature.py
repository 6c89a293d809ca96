"""Truncated path signatures of piecewise-linear paths.

Level ``k`` of a signature over ``d`` channels holds ``d**k`` coefficients.
Flattening uses C order, so the word ``(k1, ..., kj)`` sits at offset
``sum(k_i * d**(j - i))`` inside its level block; level 0 is dropped from
flat vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyBundle, ZeroInitialValue
from .paths import Path, PathBundle, augment_time, group_by_length, normalize_start


@dataclass(frozen=True, eq=False)
class TruncatedSig:
    dim: int
    level: int
    coeffs: tuple  # coeffs[k] has shape (dim,) * k; coeffs[0] is the scalar 1

    def __post_init__(self):
        if len(self.coeffs) != self.level + 1:
            raise ValueError("need one coefficient block per level")
        for k, c in enumerate(self.coeffs):
            if np.shape(c) != (self.dim,) * k:
                raise ValueError(f"level {k} block has shape {np.shape(c)}")

    def flatten(self) -> np.ndarray:
        """Levels 1..L concatenated in lexicographic word order."""
        return np.concatenate([np.ravel(c) for c in self.coeffs[1:]])

    @classmethod
    def from_flat(cls, flat, dim: int, level: int) -> "TruncatedSig":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != sig_length(dim, level):
            raise DimMismatch(f"flat vector of length {flat.size} for d={dim}, L={level}")
        blocks = [np.array(1.0)]
        start = 0
        for k in range(1, level + 1):
            n = dim**k
            blocks.append(flat[start : start + n].reshape((dim,) * k))
            start += n
        return cls(dim, level, tuple(blocks))

    @classmethod
    def identity(cls, dim: int, level: int) -> "TruncatedSig":
        return cls(dim, level, tuple(_unit_blocks(dim, level)))


def sig_length(dim: int, level: int) -> int:
    """Number of flattened coefficients, level 0 excluded."""
    return sum(dim**k for k in range(1, level + 1))


def _unit_blocks(dim, level):
    return [np.array(1.0)] + [np.zeros((dim,) * k) for k in range(1, level + 1)]


def segment_signature(increment, level: int) -> TruncatedSig:
    """Tensor exponential of a single linear increment."""
    if level < 1:
        raise ValueError("truncation level must be at least 1")
    inc = np.asarray(increment, dtype=np.float64).ravel()
    blocks = [np.array(1.0)]
    for k in range(1, level + 1):
        blocks.append(np.multiply.outer(blocks[-1], inc) / k)
    return TruncatedSig(inc.size, level, tuple(blocks))


def chen_product(a: TruncatedSig, b: TruncatedSig) -> TruncatedSig:
    """Signature of the concatenation: level k is sum over i+j=k of a_i (x) b_j."""
    if a.dim != b.dim or a.level != b.level:
        raise DimMismatch(
            f"cannot multiply signatures (d={a.dim}, L={a.level}) and (d={b.dim}, L={b.level})"
        )
    blocks = []
    for k in range(a.level + 1):
        acc = np.zeros((a.dim,) * k)
        for i in range(k + 1):
            acc = acc + np.multiply.outer(a.coeffs[i], b.coeffs[k - i])
        blocks.append(acc)
    blocks[0] = np.array(1.0)
    return TruncatedSig(a.dim, a.level, tuple(blocks))


def sig_inner_product(a: TruncatedSig, b: TruncatedSig) -> float:
    if a.dim != b.dim or a.level != b.level:
        raise DimMismatch("signatures must share dimension and level")
    return float(sum(np.vdot(x, y) for x, y in zip(a.coeffs, b.coeffs)))


def signature_batch(values: np.ndarray, level: int) -> np.ndarray:
    """Flattened signatures of a stack of equal-length paths.

    ``values`` has shape ``(n, len, d)``; the result is ``(n, sig_length(d, L))``.
    Each segment is folded in with a Horner scheme for ``S (x) exp(delta)``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    n, _, d = values.shape
    incs = np.diff(values, axis=1)
    levels = [np.ones((n, 1))] + [np.zeros((n, d**k)) for k in range(1, level + 1)]
    for s in range(incs.shape[1]):
        delta = incs[:, s, :]
        for k in range(level, 0, -1):
            acc = levels[0] * (delta / k)
            for j in range(1, k):
                acc = acc + levels[j]
                acc = (acc[:, :, None] * (delta[:, None, :] / (k - j))).reshape(n, -1)
            levels[k] = levels[k] + acc
    return np.concatenate(levels[1:], axis=1)


def signature_truncated(p: Path, level: int) -> TruncatedSig:
    flat = signature_batch(p.values[None], level)[0]
    return TruncatedSig.from_flat(flat, p.dim, level)


def kernelize_path(p: Path) -> Path:
    """Map every value coordinate except the leading time column to exp(-v^2)."""
    vals = p.values.copy()
    vals[:, 1:] = np.exp(-vals[:, 1:] ** 2)
    return Path(p.times, vals)


def _prepare(p: Path) -> Path:
    return kernelize_path(augment_time(normalize_start(p, 1.0)))


def expected_signature(bundle: PathBundle, level: int) -> np.ndarray:
    """Mean flattened signature of the start-normalised, time-augmented,
    kernelised paths of ``bundle``.

    Paths of different lengths are allowed. The mean is taken over column-wise
    sorted rows so the result does not depend on path order.
    """
    if len(bundle) == 0:
        raise EmptyBundle("expected signature of an empty bundle")
    prepared = [_prepare(p) for p in bundle]
    rows = []
    for idx in group_by_length(prepared).values():
        rows.append(signature_batch(np.stack([prepared[i].values for i in idx]), level))
    sigs = np.sort(np.concatenate(rows, axis=0), axis=0)
    return sigs.sum(axis=0) / len(prepared)


def expected_signature_arrays(values: np.ndarray, times: np.ndarray, level: int) -> np.ndarray:
    """Fast path of :func:`expected_signature` for a uniform ``(n, len)`` 1-d stack
    or ``(n, len, d)`` stack sharing ``times``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    n, length, d = values.shape
    if n == 0:
        raise EmptyBundle("expected signature of an empty bundle")
    start = values[:, :1, :]
    if np.any(start == 0):
        raise ZeroInitialValue("cannot normalise a coordinate that starts at 0")
    lifted = np.empty((n, length, d + 1))
    lifted[:, :, 0] = times
    lifted[:, :, 1:] = np.exp(-((values / start) ** 2))
    sigs = np.sort(signature_batch(lifted, level), axis=0)
    return sigs.sum(axis=0) / n

