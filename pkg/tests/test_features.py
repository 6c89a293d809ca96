import json

import numpy as np
import pytest

from speedrs.approximator import MmdApproximator
from speedrs.errors import ConfigError, DimMismatch, IndivisibleCount, LengthMismatch
from speedrs.features import (
    FeatureTable,
    PointwiseFeaturizer,
    ReferenceSet,
    SpeedrsFeaturizer,
    build_reference_sets,
    class_counts,
    features_pointwise,
    matern32_gram,
    nested_subset,
    rebuild_reference,
    train_regressor,
)
from speedrs.neural import MlpSpec, TrainConfig, mlp_init, standardize_fit
from speedrs.paths import Path, PathBundle
from speedrs.sim import SimGrid

GRID = SimGrid(1.0, 4)


@pytest.fixture(scope="module")
def refs1():
    return build_reference_sets(5, 1, seed=11, grid=GRID, level=2, batch=6, baseline_batch=5)


@pytest.fixture(scope="module")
def refs3():
    return build_reference_sets(30, 3, seed=11, grid=GRID, level=2, batch=4, baseline_batch=3)


def test_class_counts():
    assert class_counts(20) == [8, 8, 4]
    assert class_counts(10) == [4, 4, 2]
    assert class_counts(5) == [2, 2, 1]
    assert sum(class_counts(7)) == 7


def test_per_marginal_split(refs3):
    assert len(refs3) == 30
    for j in range(3):
        kinds = [r.kind for r in refs3 if r.marginal == j]
        assert [kinds.count(k) for k in ("RBergomi", "MeanReverting", "GBM")] == [4, 4, 2]


def test_indivisible_counts(refs3):
    with pytest.raises(IndivisibleCount):
        build_reference_sets(10, 3, seed=0, grid=GRID)
    with pytest.raises(IndivisibleCount):
        nested_subset(refs3, 20)


def test_nested_subset_is_prefix_of_ranks(refs3):
    idx = nested_subset(refs3, 15)
    assert len(idx) == 15
    sub = [refs3[i] for i in idx]
    for j in range(3):
        kinds = [r.kind for r in sub if r.marginal == j]
        assert [kinds.count(k) for k in ("RBergomi", "MeanReverting", "GBM")] == [2, 2, 1]


def test_rebuild_reference_is_bit_identical(refs1):
    for r in refs1:
        entry = json.loads(json.dumps(r.manifest_entry()))
        back = rebuild_reference(entry, GRID, 2, 6, 5)
        assert back.digest() == r.digest()
        assert np.array_equal(back.expected_sig, r.expected_sig)


def _bundle(rng, n=4, d=1):
    values = 1.0 + 0.1 * rng.standard_normal((n, GRID.n_steps + 1, d)).cumsum(axis=1)
    values[:, 0, :] = 1.0
    return PathBundle.from_arrays(GRID.times, values)


def _approximator(level=2):
    k = 2 * 6
    model = mlp_init(MlpSpec(k, 8, "relu"), 0)
    std = standardize_fit(np.random.default_rng(0).standard_normal((20, k)))
    return MmdApproximator(model, std, level)


def test_speedrs_feature_length_and_sign(refs3, rng):
    f = SpeedrsFeaturizer(refs3, _approximator())(_bundle(rng, d=3))
    assert f.shape == (30,)
    assert np.all(f >= 0.0)


def test_speedrs_dimension_check(refs3, rng):
    with pytest.raises(DimMismatch):
        SpeedrsFeaturizer(refs3, _approximator())(_bundle(rng, d=2))


def test_speedrs_permutation_invariant(refs1, rng):
    b = _bundle(rng, n=6)
    flipped = PathBundle(tuple(reversed(b.paths)))
    feat = SpeedrsFeaturizer(refs1, _approximator())
    np.testing.assert_allclose(feat(b), feat(flipped), rtol=1e-12, atol=1e-15)


def test_pointwise_permutation_invariant(refs1, rng):
    b = _bundle(rng, n=6)
    flipped = PathBundle(tuple(reversed(b.paths)))
    np.testing.assert_allclose(features_pointwise(b, refs1), features_pointwise(flipped, refs1), rtol=1e-12)


def _loop_mmd(X, Z, sigma, as_printed):
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / (2 * sigma**2))
    n, m = len(X), len(Z)
    xx = sum(k(a, b) for a in X for b in X)
    xz = sum(k(a, b) for a in X for b in Z)
    zz = sum(k(a, b) for a in Z for b in Z)
    if as_printed:
        return xx / n - 2 * xz / (n * m) + zz / m
    return xx / n**2 - 2 * xz / (n * m) + zz / m**2


@pytest.mark.parametrize("form", ["as_printed", "standard_biased"])
def test_pointwise_matches_loop(refs1, rng, form):
    b = _bundle(rng, n=3)
    X = np.stack([p.values[:, 0] / p.values[0, 0] for p in b.paths])
    got = features_pointwise(b, refs1, "rbf", 0.7, form)
    want = [_loop_mmd(X, r.samples, 0.7, form == "as_printed") for r in refs1]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_pointwise_golden():
    # two flat paths at distance 1 per step over 5 points, sigma 1
    X = np.ones((1, 5))
    Z = np.full((1, 5), 2.0)
    want = 2.0 - 2.0 * np.exp(-2.5)
    np.testing.assert_allclose(_loop_mmd(X, Z, 1.0, True), want, rtol=1e-15)
    ref = ReferenceSet(0, 0, "GBM", "{}", 0, 0, np.zeros(6), Z)
    bundle = PathBundle((Path(GRID.times, np.ones((5, 1))),))
    np.testing.assert_allclose(features_pointwise(bundle, [ref]), [want], rtol=1e-14)


def test_matern_at_zero_distance():
    x = np.random.default_rng(1).standard_normal((4, 3))
    np.testing.assert_allclose(np.diag(matern32_gram(x, x, 0.5)), 1.0, rtol=1e-12)


def test_pointwise_option_checks(refs1):
    with pytest.raises(ConfigError):
        PointwiseFeaturizer(refs1, kernel="laplace")
    with pytest.raises(ConfigError):
        PointwiseFeaturizer(refs1, form="unbiased")


def test_pointwise_needs_common_length(refs1):
    ragged = PathBundle((Path(GRID.times, np.ones((5, 1))), Path(np.linspace(0, 1, 7), np.ones((7, 1)))))
    with pytest.raises(LengthMismatch):
        features_pointwise(ragged, refs1)
    short = PathBundle((Path(np.linspace(0, 1, 3), np.ones((3, 1))),))
    with pytest.raises(LengthMismatch):
        features_pointwise(short, refs1)


def test_feature_table_csv(tmp_path):
    t = FeatureTable(np.arange(6.0).reshape(2, 3) / 7, [0.5, 1.5], ['{"a": 1}', '{"b": 2}'], [3, 4])
    path = tmp_path / "t.csv"
    t.write_csv(path)
    assert path.read_text().splitlines()[0] == "ref_0,ref_1,ref_2,target,spec,seed"
    back = FeatureTable.read_csv(path)
    assert np.array_equal(back.X, t.X) and np.array_equal(back.y, t.y)
    assert back.specs == t.specs and back.seeds == t.seeds


def test_feature_table_checks():
    with pytest.raises(LengthMismatch):
        FeatureTable(np.zeros((3, 2)), [1.0, 2.0], ["", ""], [0, 1])
    with pytest.raises(ConfigError):
        FeatureTable(np.array([[np.nan]]), [1.0], [""], [0])


def test_regressor_trains(rng):
    X = rng.standard_normal((60, 4))
    y = X @ np.array([1.0, -0.5, 0.2, 0.0])
    t = FeatureTable(X, y, [""] * 60, list(range(60)))
    reg, metrics = train_regressor(t, 16, TrainConfig(epochs=200, batch_size=16, initial_lr=5e-3, seed=0))
    assert metrics["valid_mse"] < 0.2 * np.var(y)
    assert reg.predict(X[:3]).shape == (3,)
