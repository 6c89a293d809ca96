import numpy as np
import pytest

from speedrs import _backend, _fallback
from speedrs.errors import ConfigError, DimMismatch, NumericalOverflow
from speedrs.paths import Path
from speedrs.sigkernel import (
    LINEAR,
    GoursatConfig,
    StaticKernel,
    gram_matrix,
    gram_stack,
    refine,
    solve_goursat,
    static_gram,
)
from speedrs.signature import sig_inner_product, signature_truncated
from speedrs.sim import GBM, SimGrid, simulate_array

from conftest import random_path


def loop_goursat(G, scheme):
    """Scalar double loop over the grid, straight from the update rules."""
    P, Q = G.shape
    u = np.ones((P, Q))
    for i in range(P - 1):
        for j in range(Q - 1):
            d = G[i + 1, j + 1] - G[i + 1, j] - G[i, j + 1] + G[i, j]
            if scheme == "first":
                u[i + 1, j + 1] = u[i + 1, j] + u[i, j + 1] - u[i, j] + d * u[i, j]
            else:
                u[i + 1, j + 1] = (u[i + 1, j] + u[i, j + 1]) * (1 + d / 2 + d * d / 12) - u[i, j] * (1 - d * d / 12)
    return u


def test_static_gram_closed_forms():
    rbf = StaticKernel("rbf", 0.5)
    x = Path([0.0, 1.0], [[0.0], [1.0]])
    G = static_gram(x, x, rbf)
    assert G[0, 0] == 1.0
    assert abs(G[0, 1] - np.exp(-2.0)) < 1e-15
    a = Path([0.0, 1.0], [[1.0, 0.0], [1.0, 0.0]])
    b = Path([0.0, 1.0], [[0.0, 1.0], [0.0, 1.0]])
    assert np.all(static_gram(a, b, LINEAR) == 0.0)
    with pytest.raises(DimMismatch):
        static_gram(a, x, LINEAR)


def test_config_validation():
    with pytest.raises(ConfigError):
        StaticKernel("rbf", 0.0)
    with pytest.raises(ConfigError):
        GoursatConfig(13)
    with pytest.raises(ConfigError):
        GoursatConfig(1, "third")


def test_refine_inserts_midpoints():
    v = np.array([[0.0, 0.0], [1.0, 2.0]])
    r = refine(v, 2)
    assert r.shape == (5, 2)
    assert np.allclose(r[:, 1], [0.0, 0.5, 1.0, 1.5, 2.0])
    assert np.array_equal(refine(v, 0), v)


@pytest.mark.parametrize("scheme", ["first", "second"])
@pytest.mark.parametrize("kind", ["linear", "rbf"])
def test_solver_matches_loop_oracle(rng, scheme, kind):
    k = StaticKernel(kind, 0.7)
    x, y = random_path(rng, 6, 2, 0.3, augment=True), random_path(rng, 8, 2, 0.3, augment=True)
    cfg = GoursatConfig(1, scheme)
    G = k.gram(refine(x.values, 1), refine(y.values, 1))
    assert abs(solve_goursat(x, y, k, cfg) - loop_goursat(G, scheme)[-1, -1]) < 1e-12


def test_constant_path_gives_one(rng):
    x = random_path(rng, 6, 2, augment=False)
    y = Path(np.linspace(0, 1, 5), np.ones((5, 2)))
    assert solve_goursat(x, y, LINEAR, GoursatConfig(2)) == 1.0


def test_symmetry(rng):
    x, y = random_path(rng, 7, 2, 0.4, True), random_path(rng, 9, 2, 0.4, True)
    for k in (LINEAR, StaticKernel("rbf", 0.5)):
        a, b = solve_goursat(x, y, k), solve_goursat(y, x, k)
        assert abs(a - b) <= 1e-12 * abs(a)


def _small_tv_path(rng, length=6):
    t = np.linspace(0.0, 0.2, length)
    v = np.cumsum(rng.normal(0, 0.04, length))
    p = Path(t, np.column_stack([t, v]))
    assert np.sum(np.abs(np.diff(p.values, axis=0))) <= 0.5
    return p


def test_matches_truncated_signature_oracle(rng):
    for _ in range(5):
        x, y = _small_tv_path(rng), _small_tv_path(rng)
        pde = solve_goursat(x, y, LINEAR, GoursatConfig(2, "second"))
        sig = sig_inner_product(signature_truncated(x, 8), signature_truncated(y, 8))
        assert abs(pde - sig) <= 1e-2 * abs(sig)


def test_refinement_converges(rng):
    x, y = random_path(rng, 5, 2, 0.5, True), random_path(rng, 5, 2, 0.5, True)
    vals = [solve_goursat(x, y, LINEAR, GoursatConfig(o, "second")) for o in range(5)]
    gaps = np.abs(np.diff(vals))
    assert np.all(np.diff(gaps) < 0)


def test_overflow_is_reported():
    t = np.linspace(0, 1, 4)
    x = Path(t, np.column_stack([t, [0.0, 1e80, -1e80, 1e80]]))
    with pytest.raises(NumericalOverflow):
        solve_goursat(x, x, LINEAR, GoursatConfig(0))


def test_gram_matrix_consistency(rng):
    paths = [random_path(rng, 6, 2, 0.3, True) for _ in range(4)]
    k = StaticKernel("rbf", 0.5)
    single = gram_matrix(paths[:1], paths[:1], k)
    assert single.shape == (1, 1) and single[0, 0] == solve_goursat(paths[0], paths[0], k)
    full = gram_matrix(paths, paths, k)
    sym = gram_matrix(paths, None, k, symmetric=True)
    assert np.max(np.abs(full - sym)) <= 1e-12


def test_gram_psd_on_gbm():
    grid = SimGrid(1.0, 14)
    vals = simulate_array(GBM(0.1, 0.3, 1.0), grid, 10, seed=5)
    paths = [Path(grid.times, np.column_stack([grid.times, v])) for v in vals]
    G = gram_matrix(paths, None, StaticKernel("rbf", 0.5), symmetric=True)
    assert np.min(np.linalg.eigvalsh(G)) >= -1e-8 * np.trace(G)


def test_window_grams_match_restricted_paths(rng):
    t = np.linspace(0, 1, 6)
    X = np.stack([np.column_stack([t, np.cumsum(rng.normal(0, 0.3, 6))]) for _ in range(3)])
    k, cfg = StaticKernel("rbf", 0.5), GoursatConfig(1)
    W = gram_stack(X, None, k, cfg, windows=True)
    for s in range(1, 6):
        a, b = Path(t[: s + 1], X[0, : s + 1]), Path(t[: s + 1], X[2, : s + 1])
        assert abs(W[0, 2, s] - solve_goursat(a, b, k, cfg)) < 1e-12
    assert np.all(W[:, :, 0] == 1.0)


def test_backends_agree(rng):
    X = refine(rng.normal(0, 0.3, (4, 7, 2)).cumsum(axis=1), 1)
    Y = refine(rng.normal(0, 0.3, (3, 7, 2)).cumsum(axis=1), 1)
    for args in ((X, Y, 1, 0.5, 1, 0, False), (X, X, 0, 1.0, 0, 2, True)):
        a = _fallback.goursat_pairs(*args)
        b = _backend.goursat_pairs(*args)
        assert np.max(np.abs(a - b)) < 1e-12
    delta = rng.normal(0, 0.1, (5, 6, 6))
    assert np.max(np.abs(_fallback.goursat_increments(delta, 1) - _backend.goursat_increments(delta, 1))) < 1e-12
