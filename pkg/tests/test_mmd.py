import numpy as np
import pytest

from speedrs.errors import SingularSystem, TooFewSamples, WindowGridMismatch
from speedrs.mmd import (
    anchor,
    build_context,
    cond_kme_inner,
    inner_tensor,
    mmd1_unbiased,
    mmd2_unbiased,
    ridge_coefficients,
    second_level_gram,
    second_level_static,
    u_statistic,
)
from speedrs.paths import Path
from speedrs.sigkernel import GoursatConfig, StaticKernel, gram_stack
from speedrs.sim import GBM, RBergomi, SimGrid, derive_seed, make_rng, sample_params, simulate_array

GRID = SimGrid(1.0, 14)
RBF = StaticKernel("rbf", 0.5)


def aug(values, times=GRID.times):
    return [Path(times, np.column_stack([times, v / v[0]])) for v in values]


def gbm(n, seed, sigma=0.3):
    return aug(simulate_array(GBM(0.1, sigma, 1.0), GRID, n, seed))


def test_u_statistic_of_constant_kernel_is_zero():
    c = 0.7
    assert abs(u_statistic(np.full((4, 4), c), np.full((5, 5), c), np.full((4, 5), c))) < 1e-15
    with pytest.raises(TooFewSamples):
        u_statistic(np.ones((1, 1)), np.ones((3, 3)), np.ones((1, 3)))


def test_mmd1_symmetry_and_permutation():
    A, B = gbm(8, 1), gbm(9, 2, 0.6)
    ab = mmd1_unbiased(A, B, RBF)
    assert abs(ab - mmd1_unbiased(B, A, RBF)) < 1e-12
    perm = np.random.default_rng(0).permutation(8)
    assert abs(ab - mmd1_unbiased([A[i] for i in perm], B, RBF)) < 1e-12
    with pytest.raises(TooFewSamples):
        mmd1_unbiased(A[:1], B)


def test_mmd1_same_law_centred():
    est = [mmd1_unbiased(gbm(50, derive_seed(7, r, 0)), gbm(50, derive_seed(7, r, 1)), RBF) for r in range(100)]
    se = np.std(est, ddof=1) / np.sqrt(len(est))
    assert abs(np.mean(est)) <= 3 * se


def test_mmd1_concentrates_with_n():
    spread = []
    for n in (10, 40):
        est = [mmd1_unbiased(gbm(n, derive_seed(5, n, r, 0)), gbm(n, derive_seed(5, n, r, 1)), RBF) for r in range(12)]
        spread.append(np.std(est))
    assert spread[1] < spread[0]


def _ctx(lam=1e-3, same=False):
    A = gbm(6, 3)
    B = A if same else gbm(7, 4, 0.5)
    return build_context(A, B, RBF, GoursatConfig(1), lam)


def test_cond_kme_inner_matches_formula():
    ctx = _ctx()
    s, t, i, j = 5, 9, 2, 4
    kx = ctx.win_xx[s][:, i]
    ky = ctx.win_yy[t][:, j]
    n, m = ctx.n, ctx.m
    left = np.linalg.solve(ctx.win_xx[s] + n * ctx.lam * np.eye(n), kx)
    right = np.linalg.solve(ctx.win_yy[t] + m * ctx.lam * np.eye(m), ky)
    direct = left @ ctx.gram_xy @ right
    assert abs(cond_kme_inner(ctx, i, j, s, t) - direct) < 1e-10 * max(1.0, abs(direct))
    assert abs(inner_tensor(ctx)[i, j, s, t] - cond_kme_inner(ctx, i, j, s, t)) < 1e-12


def test_cond_kme_inner_shrinks_with_lambda():
    vals = [abs(cond_kme_inner(_ctx(lam), 1, 2, 14, 14)) for lam in (1e-1, 1.0, 10.0)]
    assert vals[0] > vals[1] > vals[2]


def test_cond_kme_inner_self_positive_and_symmetric():
    ctx = _ctx(same=True)
    for s in (3, 8, 14):
        assert cond_kme_inner(ctx, 2, 2, s, s, "xx") > 0
    assert abs(cond_kme_inner(ctx, 1, 4, 3, 11, "xx") - cond_kme_inner(ctx, 4, 1, 11, 3, "xx")) < 1e-12


def test_cond_kme_inner_is_linear_in_selector():
    ctx = _ctx()
    base = cond_kme_inner(ctx, 1, 2, 6, 8)
    ctx.coef_x = ctx.coef_x.copy()
    ctx.coef_x[6][:, 1] *= 3.5
    assert abs(cond_kme_inner(ctx, 1, 2, 6, 8) - 3.5 * base) < 1e-12 * max(1.0, abs(base))


def test_ridge_refuses_tiny_lambda():
    with pytest.raises(SingularSystem):
        ridge_coefficients(np.ones((2, 3, 3)), 1e-12)


def test_window_grid_mismatch():
    other = SimGrid(2.0, 14)
    with pytest.raises(WindowGridMismatch):
        build_context(gbm(3, 1), aug(simulate_array(GBM(0.1, 0.3, 1.0), other, 3, 2), other.times), RBF, GoursatConfig())


def test_second_level_linear_equals_path_signature_kernel():
    # embedding paths that are explicit vectors: M is their inner products
    rng = np.random.default_rng(3)
    Z = np.cumsum(rng.normal(0, 0.2, (4, 6, 3)), axis=1)
    M = np.einsum("isd,jtd->ijst", Z, Z)
    got = second_level_gram(second_level_static(M, None, None, StaticKernel("linear")), GoursatConfig(0), True)
    want = gram_stack(Z, None, StaticKernel("linear"), GoursatConfig(0))
    assert np.max(np.abs(got - want)) < 1e-12
    norms = np.einsum("isd,isd->is", Z, Z)
    G = second_level_static(M, norms, norms, StaticKernel("rbf", 0.8))
    want = gram_stack(Z, None, StaticKernel("rbf", 0.8), GoursatConfig(0))
    got = second_level_gram(G, GoursatConfig(0), True)
    assert np.max(np.abs(got - want)) < 1e-12


def test_second_level_dyadic_refinement_matches_refined_paths():
    rng = np.random.default_rng(4)
    Z = np.cumsum(rng.normal(0, 0.2, (3, 5, 2)), axis=1)
    M = np.einsum("isd,jtd->ijst", Z, Z)
    got = second_level_gram(M, GoursatConfig(1), True)
    want = gram_stack(Z, None, StaticKernel("linear"), GoursatConfig(1))
    assert np.max(np.abs(got - want)) < 1e-12


def test_anchor_translates_to_origin():
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(3, 4, 2))
    M = np.einsum("isd,jtd->ijst", Z, Z)
    Z0 = Z - Z[:, :1]
    assert np.max(np.abs(anchor(M) - np.einsum("isd,jtd->ijst", Z0, Z0))) < 1e-12


def test_mmd2_symmetry_and_permutation():
    A, B = gbm(6, 5), gbm(7, 6, 0.6)
    ab = mmd2_unbiased(A, B)
    assert abs(ab - mmd2_unbiased(B, A)) <= 1e-10
    perm = np.random.default_rng(1).permutation(6)
    assert abs(ab - mmd2_unbiased([A[i] for i in perm], B)) <= 1e-10


def test_mmd2_finite_over_parameter_ranges():
    classes = ("GBM", "MeanReverting", "RBergomi")
    for r in range(50):
        rng = make_rng(derive_seed(99, r))
        specs = [sample_params(classes[rng.integers(3)], rng) for _ in range(2)]
        A = aug(simulate_array(specs[0], GRID, 6, derive_seed(99, r, 1)))
        B = aug(simulate_array(specs[1], GRID, 6, derive_seed(99, r, 2)))
        assert np.isfinite(mmd2_unbiased(A, B))


def test_mmd2_separates_laws():
    A = gbm(20, 1)
    B = aug(simulate_array(RBergomi(0.2, 2.5, 0.1, -0.7, 1.0), GRID, 20, 2))
    assert mmd2_unbiased(A, B) > mmd2_unbiased(A, gbm(20, 3))


def test_anchoring_is_invisible_to_linear_second_level():
    A, B = gbm(5, 11), gbm(6, 12, 0.5)
    lin = StaticKernel("linear")
    assert abs(mmd2_unbiased(A, B, k2=lin) - mmd2_unbiased(A, B, k2=lin, anchored=True)) < 1e-10
