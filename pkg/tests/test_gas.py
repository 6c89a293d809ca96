import numpy as np
import pytest

from speedrs.errors import PackingTooDense
from speedrs.gas import initial_positions, initial_velocities, particle_radius, run_ideal_gas, simulate_ideal_gas
from speedrs.sim import IdealGas, SimGrid, make_rng

GRID = SimGrid(1.0, 19)


def test_radius_rule():
    assert abs(particle_radius(IdealGas(1.0, 100, 800.0)) - 0.35 * 2.0) < 1e-15


def test_maxwell_boltzmann_temperature_scaling():
    n = 20_000
    cold = np.sum(initial_velocities(n, 1.0, make_rng(1)) ** 2, axis=1)
    hot = np.sum(initial_velocities(n, 4.0, make_rng(2)) ** 2, axis=1)
    ratio = hot.mean() / cold.mean()
    # delta-method SE of a ratio of independent means
    se = ratio * np.sqrt((hot.std() / hot.mean()) ** 2 / n + (cold.std() / cold.mean()) ** 2 / n)
    assert abs(ratio - 4.0) <= 3 * se
    assert abs(cold.mean() - 3.0) <= 3 * cold.std() / np.sqrt(n)


def test_directions_are_isotropic():
    v = initial_velocities(20_000, 2.0, make_rng(3))
    u = v / np.linalg.norm(v, axis=1, keepdims=True)
    assert np.all(np.abs(u.mean(axis=0)) < 3 * np.sqrt(1 / 3 / 20_000))


def test_positions_do_not_overlap():
    r = 0.3
    pos = initial_positions(200, 10.0, r, make_rng(4))
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(200) * 10
    assert d.min() >= 2 * r
    with pytest.raises(PackingTooDense):
        initial_positions(500, 3.0, 0.4, make_rng(5))


@pytest.mark.parametrize("temperature", [1.0, 7.5])
def test_energy_conserved_and_box_respected(temperature):
    run = run_ideal_gas(IdealGas(temperature, 60, 60.0), GRID, seed=6)
    e = run.kinetic_energy()
    assert np.max(np.abs(e / e[0] - 1.0)) <= 1e-9
    assert run.n_collisions > 0
    assert run.positions.min() >= 0.0 and run.positions.max() <= run.side


def test_wall_bounce_keeps_speed():
    run = run_ideal_gas(IdealGas(3.0, 1, 8.0), SimGrid(5.0, 50), seed=7)
    speed = np.linalg.norm(run.velocities[0], axis=1)
    assert np.allclose(speed, speed[0], rtol=1e-14)
    assert np.any(np.diff(np.sign(run.velocities[0]), axis=0) != 0)  # it did bounce


def test_bundle_shape_and_reproducibility():
    spec = IdealGas(2.0, 30, 30.0)
    a = simulate_ideal_gas(spec, GRID, seed=8)
    b = simulate_ideal_gas(spec, GRID, seed=8)
    assert len(a) == 30 and a.dim == 3 and len(a[0]) == 20
    assert all(x == y for x, y in zip(a, b))
