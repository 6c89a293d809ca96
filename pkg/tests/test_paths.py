import numpy as np
import pytest

from speedrs.errors import (
    EmptyBundle,
    IndexOutOfRange,
    ShapeMismatch,
    TooFewPoints,
    WindowTooShort,
    ZeroInitialValue,
)
from speedrs.paths import (
    Path,
    PathBundle,
    augment_time,
    marginal,
    normalize_start,
    read_pb1,
    restrict_window,
    subsample_irregular,
    write_pb1,
)
from speedrs.sim import GBM, SimGrid, simulate

from conftest import random_path


def test_path_rejects_bad_input():
    with pytest.raises(TooFewPoints):
        Path([0.0], [[1.0]])
    with pytest.raises(ValueError):
        Path([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        Path([0.0, 1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Path([0.0, 1.0], [1.0, np.nan])


def test_path_is_read_only():
    p = Path([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        p.values[0, 0] = 5.0


def test_augment_time():
    p = augment_time(Path([0.0, 1.0], [[5.0], [7.0]]))
    assert np.array_equal(p.values, [[0.0, 5.0], [1.0, 7.0]])
    assert augment_time(p).dim == 3  # not idempotent
    long = Path(np.linspace(0, 1, 100), np.zeros(100))
    assert augment_time(long).values.shape == (100, 2)


def test_normalize_start():
    p = normalize_start(Path([0.0, 1.0], [[90.0], [99.0]]), 1.0)
    assert np.allclose(p.values[:, 0], [1.0, 1.1], rtol=0, atol=1e-15)
    assert normalize_start(p, 1.0) == p
    with pytest.raises(ZeroInitialValue):
        normalize_start(Path([0.0, 1.0], [0.0, 1.0]))


def test_normalize_start_skips_time():
    p = normalize_start(Path([0.0, 1.0], [[0.0, 2.0], [1.0, 4.0]]), 3.0, skip_time=True)
    assert np.array_equal(p.values, [[0.0, 3.0], [1.0, 6.0]])


def test_normalize_start_preserves_ratios_on_gbm_bundle():
    b = simulate(GBM(0.1, 0.3, 90.0), SimGrid(1.0, 14), 50, seed=3)
    for q in b:
        n = normalize_start(q, 1.0)
        assert n.values[0, 0] == 1.0
        ratio = q.values[:, 0] / q.values[0, 0]
        assert np.max(np.abs(n.values[:, 0] / ratio - 1.0)) <= 1e-12


def test_subsample_irregular(rng):
    p = random_path(rng, 20, 1)
    assert subsample_irregular(p, range(len(p))) == p
    ends = subsample_irregular(p, [0, len(p) - 1])
    assert len(ends) == 2 and ends.times[0] == p.times[0] and ends.times[-1] == p.times[-1]
    a = subsample_irregular(p, keep_prob=0.6, seed=9)
    b = subsample_irregular(p, keep_prob=0.6, seed=9)
    assert a == b
    assert set(a.times) <= set(p.times)
    with pytest.raises(TooFewPoints):
        subsample_irregular(p, [3])
    with pytest.raises(IndexOutOfRange):
        subsample_irregular(p, [0, 99])


def test_restrict_window(rng):
    p = Path([0.0, 1.0, 2.0, 3.0], [0.0, 2.0, 4.0, 10.0])
    assert restrict_window(p, 3.0) == p
    mid = restrict_window(p, 2.5)
    assert mid.times[-1] == 2.5 and mid.values[-1, 0] == 7.0
    exact = restrict_window(p, 2.0)
    assert len(exact) == 3
    with pytest.raises(WindowTooShort):
        restrict_window(p, 0.5)


def test_restrict_window_composition(rng):
    p = random_path(rng, 12, 2)
    for _ in range(20):
        t1, t2 = np.sort(rng.uniform(p.times[1], p.times[-1], 2))
        a, b = restrict_window(restrict_window(p, t2), t1), restrict_window(p, t1)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.values[:-1], b.values[:-1])  # original stamps: exact
        assert np.allclose(a.values[-1], b.values[-1], rtol=1e-13, atol=1e-13)


def test_marginal(rng):
    p = random_path(rng, 8, 3)
    assert np.array_equal(marginal(p, 2).values[:, 0], p.values[:, 2])
    q = random_path(rng, 8, 1)
    assert marginal(q, 0) == q
    with pytest.raises(IndexOutOfRange):
        marginal(p, 3)
    for j in range(3):
        left = augment_time(marginal(p, j)).values
        right = augment_time(p).values[:, [0, j + 1]]
        assert np.array_equal(left, right)


def test_bundle_invariants(rng):
    with pytest.raises(EmptyBundle):
        PathBundle(())
    with pytest.raises(ShapeMismatch):
        PathBundle((random_path(rng, 5, 1), random_path(rng, 5, 2)))
    b = PathBundle.from_arrays(np.linspace(0, 1, 5), rng.normal(size=(3, 5)))
    assert b.is_uniform and b.dim == 1
    t, v = b.stacked()
    assert v.shape == (3, 5, 1)


def test_pb1_round_trip(tmp_path, rng):
    b = PathBundle.from_arrays(np.linspace(0, 1, 7), rng.normal(size=(4, 7, 2)), seed=2**40 + 3,
                               spec={"model": "GBM", "mu": 0.1})
    f = tmp_path / "b.pb1"
    write_pb1(b, f)
    raw = f.read_bytes()
    assert raw[:4] == b"SPDR"
    assert len(raw) == 4 + 4 * 4 + 8 + 4 * 7 * 3 * 8
    back = read_pb1(f)
    assert back.seed == b.seed and back.spec == b.spec
    assert all(x == y for x, y in zip(back, b))


def test_pb1_rejects_ragged(tmp_path, rng):
    b = PathBundle((random_path(rng, 5, 1), random_path(rng, 6, 1)))
    with pytest.raises(ShapeMismatch):
        write_pb1(b, tmp_path / "r.pb1")
