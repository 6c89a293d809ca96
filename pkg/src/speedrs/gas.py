"""Hard-sphere ideal gas in a cube, sampled on a time grid.

Units have k_B = m = 1, so each velocity component of a particle at
temperature T is N(0, T). Dynamics are integrated with a fixed substep:
free flight, specular reflection at the walls, then elastic resolution of
every overlapping pair that is still approaching. Reflections and pair
exchanges both conserve kinetic energy exactly up to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import PackingTooDense
from .paths import PathBundle
from .sim import IdealGas, SimGrid, make_rng, spec_to_dict

RADIUS_FACTOR = 0.35
MAX_TRIES = 200


@dataclass
class GasRun:
    positions: np.ndarray  # (n_particles, n_frames, 3)
    velocities: np.ndarray  # (n_particles, n_frames, 3)
    radius: float
    side: float
    n_collisions: int

    def kinetic_energy(self) -> np.ndarray:
        """Total kinetic energy per frame."""
        return 0.5 * np.sum(self.velocities**2, axis=(0, 2))


def particle_radius(spec: IdealGas) -> float:
    return RADIUS_FACTOR * (spec.volume / spec.n_particles) ** (1.0 / 3.0)


def initial_positions(n: int, side: float, radius: float, rng) -> np.ndarray:
    """Random sequential insertion of non-overlapping spheres inside the box."""
    if side <= 2 * radius:
        raise PackingTooDense("box is narrower than one particle")
    lo, hi = radius, side - radius
    pos = np.empty((n, 3))
    min_sq = (2 * radius) ** 2
    for i in range(n):
        for _ in range(MAX_TRIES):
            cand = rng.uniform(lo, hi, 3)
            if i == 0 or np.min(np.sum((pos[:i] - cand) ** 2, axis=1)) >= min_sq:
                pos[i] = cand
                break
        else:
            raise PackingTooDense(f"could not place particle {i} of {n} after {MAX_TRIES} tries")
    return pos


def initial_velocities(n: int, temperature: float, rng) -> np.ndarray:
    """Maxwell-Boltzmann speeds with directions uniform on the sphere."""
    speed = np.sqrt(temperature) * np.sqrt(rng.chisquare(3, n))
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return speed[:, None] * direction


def _reflect(pos, vel, lo, hi):
    for _ in range(4):  # a fast particle can cross both faces within one substep
        below = pos < lo
        above = pos > hi
        if not (below.any() or above.any()):
            return
        pos[below] = 2 * lo - pos[below]
        pos[above] = 2 * hi - pos[above]
        vel[below | above] *= -1.0


def _collide(pos, vel, radius) -> int:
    pairs = cKDTree(pos).query_pairs(2 * radius, output_type="ndarray")
    if len(pairs) == 0:
        return 0
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    count = 0
    for i, j in pairs:
        dx = pos[i] - pos[j]
        dist2 = dx @ dx
        if dist2 == 0.0:
            continue
        dv = vel[i] - vel[j]
        approach = dv @ dx
        if approach >= 0.0:
            continue
        # equal masses: swap the velocity components along the line of centres
        shift = (approach / dist2) * dx
        vel[i] -= shift
        vel[j] += shift
        count += 1
    return count


def run_ideal_gas(spec: IdealGas, grid: SimGrid, seed: int, substep: float | None = None) -> GasRun:
    """Simulate and record positions and velocities at every grid time."""
    rng = make_rng(seed)
    n = spec.n_particles
    side = spec.volume ** (1.0 / 3.0)
    radius = particle_radius(spec)
    pos = initial_positions(n, side, radius, rng)
    vel = initial_velocities(n, spec.temperature, rng)
    lo, hi = radius, side - radius

    if substep is None:
        # a typical fast particle moves at most half a radius per substep
        vmax = 4.0 * math.sqrt(spec.temperature)
        substep = 0.5 * radius / vmax
    per_frame = max(1, math.ceil(grid.dt / substep))
    h = grid.dt / per_frame

    frames = grid.n_steps + 1
    out_pos = np.empty((n, frames, 3))
    out_vel = np.empty((n, frames, 3))
    out_pos[:, 0], out_vel[:, 0] = pos, vel
    collisions = 0
    for f in range(1, frames):
        for _ in range(per_frame):
            pos += h * vel
            _reflect(pos, vel, lo, hi)
            collisions += _collide(pos, vel, radius)
        out_pos[:, f], out_vel[:, f] = pos, vel
    return GasRun(out_pos, out_vel, radius, side, collisions)


def simulate_ideal_gas(spec: IdealGas, grid: SimGrid, seed: int) -> PathBundle:
    """One 3-d path per particle, sampled at the grid times."""
    run = run_ideal_gas(spec, grid, seed)
    return PathBundle.from_arrays(grid.times, run.positions, seed=seed, spec=spec_to_dict(spec))
