"""Unbiased 1st- and 2nd-order MMD estimators between bundles of paths.

Paths are used exactly as given, so callers time-augment (and normalise)
beforehand. The 2nd-order estimator represents each sample path by its
conditional kernel mean embedding along expanding windows ``[t0, t_s]``,
the windows being the native time grid of the bundle, and compares the
resulting RKHS-valued paths with a second signature kernel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _backend
from .errors import SingularSystem, TooFewSamples, WindowGridMismatch
from .paths import Path, PathBundle
from .sigkernel import GoursatConfig, StaticKernel, gram_matrix, gram_stack

MIN_LAMBDA = 1e-10


def u_statistic(kxx: np.ndarray, kyy: np.ndarray, kxy: np.ndarray) -> float:
    """Unbiased MMD^2 from the three kernel matrices (diagonals of kxx/kyy ignored)."""
    n, m = kxx.shape[0], kyy.shape[0]
    if n < 2 or m < 2:
        raise TooFewSamples("the unbiased estimator needs at least two samples per side")
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.sum() / (n * m))


def mmd1_unbiased(
    A: Sequence[Path],
    B: Sequence[Path],
    k: StaticKernel = StaticKernel("linear"),
    cfg: GoursatConfig = GoursatConfig(),
) -> float:
    A, B = list(A), list(B)
    if len(A) < 2 or len(B) < 2:
        raise TooFewSamples("the unbiased estimator needs at least two samples per side")
    kxx = gram_matrix(A, None, k, cfg, symmetric=True)
    kyy = gram_matrix(B, None, k, cfg, symmetric=True)
    kxy = gram_matrix(A, B, k, cfg)
    return u_statistic(kxx, kyy, kxy)


@dataclass
class CondKmeContext:
    """Window Grams and ridge-smoothed selectors for two bundles.

    ``win_xx[s]`` is the Gram of the x-samples restricted to ``[t0, t_s]``;
    ``coef_x[s]`` equals ``(win_xx[s] + n*lam*I)^{-1} win_xx[s]``, whose
    column ``i`` holds the ridge weights of sample ``i`` at window ``s``.
    """

    win_xx: np.ndarray  # (P, n, n)
    win_yy: np.ndarray  # (P, m, m)
    gram_xx: np.ndarray  # (n, n) full window
    gram_yy: np.ndarray  # (m, m)
    gram_xy: np.ndarray  # (n, m)
    coef_x: np.ndarray  # (P, n, n)
    coef_y: np.ndarray  # (P, m, m)
    lam: float

    @property
    def n(self) -> int:
        return self.gram_xx.shape[0]

    @property
    def m(self) -> int:
        return self.gram_yy.shape[0]


def _window_stack(paths: Sequence[Path]) -> tuple[np.ndarray, np.ndarray]:
    times = paths[0].times
    for p in paths:
        if len(p) != len(times) or not np.array_equal(p.times, times):
            raise WindowGridMismatch("all paths must share the window time grid")
    return times, np.stack([p.values for p in paths])


def ridge_coefficients(win: np.ndarray, lam: float) -> np.ndarray:
    """``(K_s + n lam I)^{-1} K_s`` for each window Gram ``K_s``; one Cholesky per window."""
    if lam < MIN_LAMBDA:
        raise SingularSystem(f"ridge parameter {lam} below {MIN_LAMBDA}")
    n = win.shape[1]
    out = np.empty_like(win)
    shift = n * lam * np.eye(n)
    for s in range(win.shape[0]):
        try:
            factor = cho_factor(win[s] + shift, lower=True, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise SingularSystem(f"ridge system at window {s} is not positive definite") from exc
        out[s] = cho_solve(factor, win[s])
    return out


def build_context(
    A: Sequence[Path],
    B: Sequence[Path],
    k: StaticKernel,
    cfg: GoursatConfig,
    lam: float = 1e-3,
) -> CondKmeContext:
    ta, XA = _window_stack(list(A))
    tb, XB = _window_stack(list(B))
    if not np.array_equal(ta, tb):
        raise WindowGridMismatch("both bundles must share the window time grid")
    win_xx = np.moveaxis(gram_stack(XA, None, k, cfg, windows=True), 2, 0)
    win_yy = np.moveaxis(gram_stack(XB, None, k, cfg, windows=True), 2, 0)
    gram_xy = gram_stack(XA, XB, k, cfg)
    return CondKmeContext(
        win_xx=win_xx,
        win_yy=win_yy,
        gram_xx=win_xx[-1],
        gram_yy=win_yy[-1],
        gram_xy=gram_xy,
        coef_x=ridge_coefficients(win_xx, lam),
        coef_y=ridge_coefficients(win_yy, lam),
        lam=lam,
    )


def cond_kme_inner(ctx: CondKmeContext, i: int, j: int, s: int, t: int, side: str = "xy") -> float:
    """Inner product of the conditional embeddings of sample ``i`` at window
    ``s`` and sample ``j`` at window ``t``.

    ``side`` picks the two bundles: ``"xy"``, ``"xx"`` or ``"yy"``.
    """
    left, right, cross = _sides(ctx, side)
    return float(left[s][:, i] @ cross @ right[t][:, j])


def _sides(ctx, side):
    if side == "xy":
        return ctx.coef_x, ctx.coef_y, ctx.gram_xy
    if side == "xx":
        return ctx.coef_x, ctx.coef_x, ctx.gram_xx
    if side == "yy":
        return ctx.coef_y, ctx.coef_y, ctx.gram_yy
    raise ValueError(f"unknown side {side!r}")


def inner_tensor(ctx: CondKmeContext, side: str = "xy") -> np.ndarray:
    """All conditional-embedding inner products, shape (n_left, n_right, P, P)."""
    left, right, cross = _sides(ctx, side)
    # (P, n, m): left[s]^T @ cross, then contract with right[t]
    lc = np.einsum("sai,ab->sib", left, cross)
    return np.einsum("sib,tbj->ijst", lc, right, optimize=True)


def anchor(M: np.ndarray) -> np.ndarray:
    """Inner products of the embedding paths after translating each to start at 0."""
    return M - M[:, :, :, :1] - M[:, :, :1, :] + M[:, :, :1, :1]


def _self_norms(Mself: np.ndarray) -> np.ndarray:
    # squared norms |x_s|^2 of each path, read off the diagonal i == j
    idx = np.arange(Mself.shape[0])
    return np.einsum("iss->is", Mself[idx, idx])


def second_level_static(
    M: np.ndarray, left_norm: np.ndarray, right_norm: np.ndarray, k2: StaticKernel
) -> np.ndarray:
    """Static kernel between embedding-path points; ``M`` holds their inner products."""
    if k2.kind == "linear":
        return M
    sq = left_norm[:, None, :, None] + right_norm[None, :, None, :] - 2.0 * M
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * k2.sigma**2))


def second_level_gram(G: np.ndarray, cfg: GoursatConfig, symmetric: bool = False) -> np.ndarray:
    """Signature kernels between embedding paths with static Gram ``G[i, j, s, t]``."""
    n, m = G.shape[:2]
    delta = G[:, :, 1:, 1:] - G[:, :, 1:, :-1] - G[:, :, :-1, 1:] + G[:, :, :-1, :-1]
    if cfg.dyadic_order:
        r = 2**cfg.dyadic_order
        delta = np.repeat(np.repeat(delta, r, axis=2), r, axis=3) / (r * r)
    if symmetric:
        ii, jj = np.triu_indices(n)
    else:
        ii, jj = np.divmod(np.arange(n * m), m)
    vals = _backend.goursat_increments(delta[ii, jj], cfg.scheme_code)
    out = np.empty((n, m))
    out[ii, jj] = vals
    if symmetric:
        out[jj, ii] = vals
    return out


def second_order_grams(ctx: CondKmeContext, k2: StaticKernel, cfg2: GoursatConfig, anchored: bool = False):
    """Second-level Gram matrices (xx, yy, xy) between conditional-embedding paths.

    With ``anchored`` the embedding paths are translated to start at the
    origin first. The linear second-level kernel only sees increments and is
    unaffected; an RBF one then ignores the offset between the two bundles'
    starting means, at the price of a downward bias under equal laws.
    """
    prep = anchor if anchored else (lambda M: M)
    mxx = prep(inner_tensor(ctx, "xx"))
    myy = prep(inner_tensor(ctx, "yy"))
    mxy = prep(inner_tensor(ctx, "xy"))
    nx, ny = _self_norms(mxx), _self_norms(myy)
    kxx = second_level_gram(second_level_static(mxx, nx, nx, k2), cfg2, True)
    kyy = second_level_gram(second_level_static(myy, ny, ny, k2), cfg2, True)
    kxy = second_level_gram(second_level_static(mxy, nx, ny, k2), cfg2)
    return kxx, kyy, kxy


def mmd2_unbiased(
    A: PathBundle | Sequence[Path],
    B: PathBundle | Sequence[Path],
    k: StaticKernel = StaticKernel("rbf", 0.5),
    cfg: GoursatConfig = GoursatConfig(),
    lam: float = 1e-3,
    k2: StaticKernel = StaticKernel("rbf", 1.0),
    cfg2: GoursatConfig | None = None,
    anchored: bool = False,
) -> float:
    """Unbiased 2nd-order MMD^2; may be negative.

    ``k``/``cfg`` drive the first-level path kernels; ``k2``/``cfg2`` (default:
    plain grid, same scheme) the kernel between conditional-embedding paths.
    An RBF ``k2`` works on RKHS distances between embeddings, a linear one
    on their raw inner products.
    """
    A, B = list(A), list(B)
    if len(A) < 2 or len(B) < 2:
        raise TooFewSamples("the unbiased estimator needs at least two samples per side")
    ctx = build_context(A, B, k, cfg, lam)
    cfg2 = cfg2 or GoursatConfig(0, cfg.scheme)
    return u_statistic(*second_order_grams(ctx, k2, cfg2, anchored))
