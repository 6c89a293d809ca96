"""Signature kernels by finite-difference solution of the Goursat PDE.

``u(s, t)`` solves ``d2u/(ds dt) = <x'(s), y'(t)> u`` with ``u = 1`` on both
axes. On a grid the driving term of a cell is the second mixed difference of
the static-kernel Gram of the two (refined) paths. Only two grid rows are kept
in memory at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .errors import ConfigError, DimMismatch
from .paths import Path, group_by_length

_KINDS = {"linear": 0, "rbf": 1}
_SCHEMES = {"first": 0, "second": 1}


@dataclass(frozen=True)
class StaticKernel:
    kind: str = "rbf"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown static kernel {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ConfigError("RBF bandwidth must be positive")

    @property
    def code(self) -> int:
        return _KINDS[self.kind]

    def gram(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        if self.kind == "linear":
            return x @ y.T
        sq = np.sum(x**2, 1)[:, None] + np.sum(y**2, 1)[None, :] - 2.0 * x @ y.T
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.sigma**2))


LINEAR = StaticKernel("linear")


@dataclass(frozen=True)
class GoursatConfig:
    dyadic_order: int = 1
    scheme: str = "second"

    def __post_init__(self):
        if not 0 <= self.dyadic_order <= 12:
            raise ConfigError("dyadic_order must lie in [0, 12]")
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")

    @property
    def scheme_code(self) -> int:
        return _SCHEMES[self.scheme]


def refine(values: np.ndarray, order: int) -> np.ndarray:
    """Insert ``2**order - 1`` equally spaced points inside every segment.

    Works on a single ``(len, d)`` path or a ``(n, len, d)`` stack.
    """
    if order == 0:
        return np.ascontiguousarray(values, dtype=np.float64)
    k = 2**order
    w = np.arange(k) / k
    start = values[..., :-1, None, :]
    step = np.diff(values, axis=-2)[..., None, :]
    body = start + w[:, None] * step
    body = body.reshape(*values.shape[:-2], -1, values.shape[-1])
    return np.ascontiguousarray(np.concatenate([body, values[..., -1:, :]], axis=-2))


def static_gram(x: Path, y: Path, k: StaticKernel) -> np.ndarray:
    if x.dim != y.dim:
        raise DimMismatch(f"paths have dimensions {x.dim} and {y.dim}")
    return k.gram(x.values, y.values)


def solve_goursat(x: Path, y: Path, k: StaticKernel = LINEAR, cfg: GoursatConfig = GoursatConfig()) -> float:
    """Signature kernel of two (already time-augmented) paths."""
    if x.dim != y.dim:
        raise DimMismatch(f"paths have dimensions {x.dim} and {y.dim}")
    X = refine(x.values, cfg.dyadic_order)[None]
    Y = refine(y.values, cfg.dyadic_order)[None]
    out = _backend.goursat_pairs(X, Y, k.code, float(k.sigma), cfg.scheme_code, 0, False)
    return float(out[0, 0])


def gram_stack(
    X: np.ndarray,
    Y: np.ndarray | None,
    k: StaticKernel,
    cfg: GoursatConfig,
    windows: bool = False,
) -> np.ndarray:
    """Kernel values between two uniform stacks of shape (n, len, d).

    ``Y=None`` means ``Y is X`` and only the upper triangle is solved. With
    ``windows`` the result has a trailing axis holding the kernel of the two
    paths restricted to each common grid prefix ``[t0, t_s]`` (s = 0..len-1);
    these all come out of one PDE sweep.
    """
    symmetric = Y is None
    Xr = refine(X, cfg.dyadic_order)
    Yr = Xr if symmetric else refine(Y, cfg.dyadic_order)
    if Xr.shape[2] != Yr.shape[2]:
        raise DimMismatch("stacks have different path dimensions")
    stride = 2**cfg.dyadic_order if windows else 0
    return _backend.goursat_pairs(
        Xr, Yr, k.code, float(k.sigma), cfg.scheme_code, stride, symmetric
    )


def gram_matrix(
    A: Sequence[Path],
    B: Sequence[Path] | None,
    k: StaticKernel = LINEAR,
    cfg: GoursatConfig = GoursatConfig(),
    symmetric: bool = False,
) -> np.ndarray:
    """Matrix of signature kernels ``k(A_i, B_j)``; paths may have mixed lengths.

    With ``symmetric`` (``B`` ignored, taken to be ``A``) only the upper
    triangle is solved and mirrored.
    """
    A = list(A)
    B = A if symmetric or B is None else list(B)
    dims = {p.dim for p in A} | {p.dim for p in B}
    if len(dims) > 1:
        raise DimMismatch("all paths must share a dimension")
    out = np.empty((len(A), len(B)))
    ga = group_by_length(A)
    gb = group_by_length(B)
    for la, ia in ga.items():
        XA = np.stack([A[i].values for i in ia])
        for lb, ib in gb.items():
            if symmetric and lb < la:
                continue
            if symmetric and lb == la:
                block = gram_stack(XA, None, k, cfg)
            else:
                XB = np.stack([B[j].values for j in ib])
                block = gram_stack(XA, XB, k, cfg)
            out[np.ix_(ia, ib)] = block
            if symmetric:
                out[np.ix_(ib, ia)] = block.T
    return out
