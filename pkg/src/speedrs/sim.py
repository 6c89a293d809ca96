"""Stochastic model specs, simulators and the barrier-option Monte Carlo pricer.

Every simulator takes an integer seed. Noise is drawn path-major from a
Philox stream keyed by that seed, so path ``i`` depends only on
``(seed, i, n_steps)`` and not on how many paths are requested.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np

from .errors import ConfigError, OddPathCount, ShapeMismatch
from .paths import PathBundle


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(*keys: int) -> int:
    """Child seed from a tuple of integers (master seed first)."""
    ss = np.random.SeedSequence(entropy=int(keys[0]), spawn_key=tuple(int(k) for k in keys[1:]))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SimGrid:
    T: float = 1.0
    n_steps: int = 14

    def __post_init__(self):
        if self.n_steps < 1 or not self.T > 0:
            raise ConfigError("grid needs T > 0 and at least one step")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


def _positive(spec, *names):
    for name in names:
        if not getattr(spec, name) > 0:
            raise ConfigError(f"{type(spec).__name__}.{name} must be positive")


def _nonnegative(spec, *names):
    # zero switches a noise source off (degenerate but well defined)
    for name in names:
        if not getattr(spec, name) >= 0:
            raise ConfigError(f"{type(spec).__name__}.{name} must be nonnegative")


def _rho(spec):
    if not -1.0 <= spec.rho < 1.0:
        raise ConfigError("rho must lie in [-1, 1)")


@dataclass(frozen=True)
class GBM:
    kind: ClassVar[str] = "GBM"
    mu: float
    sigma: float
    x0: float = 1.0

    def __post_init__(self):
        _positive(self, "mu", "x0")
        _nonnegative(self, "sigma")


@dataclass(frozen=True)
class CEV:
    kind: ClassVar[str] = "CEV"
    mu: float
    sigma: float
    gamma: float
    x0: float = 1.0

    def __post_init__(self):
        _positive(self, "mu", "x0")
        _nonnegative(self, "sigma", "gamma")


@dataclass(frozen=True)
class MeanReverting:
    kind: ClassVar[str] = "MeanReverting"
    mu: float
    kappa: float
    theta: float
    xi: float
    rho: float
    v0: float
    x0: float = 1.0

    def __post_init__(self):
        _positive(self, "mu", "kappa", "theta", "x0")
        _nonnegative(self, "xi")
        _rho(self)
        if self.v0 < 0:
            raise ConfigError("v0 must be nonnegative")


@dataclass(frozen=True)
class RBergomi:
    kind: ClassVar[str] = "RBergomi"
    xi0: float
    nu: float
    H: float
    rho: float
    x0: float = 1.0

    def __post_init__(self):
        _positive(self, "xi0", "x0")
        _nonnegative(self, "nu")
        _rho(self)
        if not 0.0 < self.H < 0.5:
            raise ConfigError("H must lie in (0, 0.5)")


@dataclass(frozen=True)
class Mixture:
    kind: ClassVar[str] = "Mixture"
    alpha: float
    left: object
    right: object

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class IdealGas:
    kind: ClassVar[str] = "IdealGas"
    temperature: float
    n_particles: int
    volume: float

    def __post_init__(self):
        if not 1.0 <= self.temperature <= 10.0:
            raise ConfigError("temperature must lie in [1, 10]")
        if self.n_particles < 1 or not self.volume > 0:
            raise ConfigError("gas needs particles and a positive volume")


MODEL_CLASSES = {c.kind: c for c in (GBM, CEV, MeanReverting, RBergomi, Mixture, IdealGas)}


def spec_to_dict(spec) -> dict:
    out = {"kind": spec.kind}
    for f in fields(spec):
        value = getattr(spec, f.name)
        out[f.name] = spec_to_dict(value) if hasattr(value, "kind") else value
    return out


def spec_from_dict(data: dict):
    data = dict(data)
    cls = MODEL_CLASSES[data.pop("kind")]
    for key, value in data.items():
        if isinstance(value, dict):
            data[key] = spec_from_dict(value)
    return cls(**data)


def spec_json(spec) -> str:
    return json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))


# sampling ranges, all half-open [lo, hi)
PARAM_RANGES = {
    "xi0": (0.01, 0.2),
    "nu": (0.5, 4.0),
    "H": (0.025, 0.5),
    "v0": (0.2, 0.8),
    "theta": (0.2, 0.8),
    "kappa": (0.2, 0.8),
    "xi": (0.2, 0.8),
    "sigma": (0.2, 0.8),
    "rho": (-1.0, 1.0),
    "mu": (0.01, 0.2),
    "gamma": (0.5, 1.5),
}

_CLASS_PARAMS = {
    "GBM": ("mu", "sigma"),
    "CEV": ("mu", "sigma", "gamma"),
    "MeanReverting": ("mu", "kappa", "theta", "xi", "rho", "v0"),
    "RBergomi": ("xi0", "nu", "H", "rho"),
}


def sample_params(kind: str, rng: np.random.Generator, x0: float = 1.0, ranges=None):
    """Draw a spec of class ``kind`` with every parameter uniform on its range."""
    if kind not in _CLASS_PARAMS:
        raise ConfigError(f"cannot sample parameters for {kind!r}")
    ranges = {**PARAM_RANGES, **(ranges or {})}
    kwargs = {}
    for name in _CLASS_PARAMS[kind]:
        lo, hi = ranges[name]
        kwargs[name] = float(rng.uniform(lo, hi))
    return MODEL_CLASSES[kind](x0=x0, **kwargs)


def read_param_ranges(text: str) -> dict:
    """Parse ``name = lo, hi`` lines into a range override mapping."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        lo, hi = (float(v) for v in value.split(","))
        out[key.strip()] = (lo, hi)
    return out


# --- path simulators, array level -------------------------------------------------


def _normals(seed, n_paths, shape):
    return make_rng(seed).standard_normal((n_paths, *shape))


def gbm_paths(spec: GBM, grid: SimGrid, n_paths: int, seed: int) -> np.ndarray:
    z = _normals(seed, n_paths, (grid.n_steps,))
    return _euler_local_vol(spec.x0, spec.mu, spec.sigma, 1.0, grid.dt, z)


def cev_paths(spec: CEV, grid: SimGrid, n_paths: int, seed: int) -> np.ndarray:
    z = _normals(seed, n_paths, (grid.n_steps,))
    return _euler_local_vol(spec.x0, spec.mu, spec.sigma, spec.gamma, grid.dt, z)


def _euler_local_vol(x0, mu, sigma, gamma, dt, z):
    n, steps = z.shape
    out = np.empty((n, steps + 1))
    out[:, 0] = x0
    sq = np.sqrt(dt)
    s = out[:, 0]
    for i in range(steps):
        level = s if gamma == 1.0 else np.maximum(s, 0.0) ** gamma
        s = s + mu * s * dt + sigma * sq * level * z[:, i]
        out[:, i + 1] = s
    return out


def mean_reverting_paths(
    spec: MeanReverting, grid: SimGrid, n_paths: int, seed: int, return_variance: bool = False
):
    z = _normals(seed, n_paths, (grid.n_steps, 2))
    zs, zv = z[:, :, 0], z[:, :, 1]
    dt, sq = grid.dt, np.sqrt(grid.dt)
    corr = np.sqrt(1.0 - spec.rho**2)
    s = np.full(n_paths, spec.x0, dtype=float)
    v = np.full(n_paths, spec.v0, dtype=float)
    out = np.empty((n_paths, grid.n_steps + 1))
    var = np.empty_like(out)
    out[:, 0], var[:, 0] = s, v
    for i in range(grid.n_steps):
        root = np.sqrt(np.maximum(v, 0.0))
        s = s + spec.mu * s * dt + root * sq * s * zs[:, i]
        v = v + spec.kappa * (spec.theta - v) * dt + spec.xi * sq * root * (
            spec.rho * zs[:, i] + corr * zv[:, i]
        )
        out[:, i + 1], var[:, i + 1] = s, v
    return (out, var) if return_variance else out


def moment_matching_points(H: float, grid: SimGrid) -> np.ndarray:
    """Lag points t_k* with g(t_k*)^2 equal to the cell average of g^2, k = 1..n."""
    dt = grid.dt
    k = np.arange(1, grid.n_steps + 1)
    avg = ((k * dt) ** (2 * H) - ((k - 1) * dt) ** (2 * H)) / (2 * H * dt)
    return avg ** (1.0 / (2 * H - 1))


def rbergomi_paths(
    spec: RBergomi, grid: SimGrid, n_paths: int, seed: int, return_noise: bool = False
):
    """Unconditional rough Bergomi log-price scheme with antithetic pairs.

    Paths ``i`` and ``i + n_paths/2`` share the price noise ``xi`` and have
    opposite volatility noise ``zeta``.
    """
    if n_paths % 2:
        raise OddPathCount("rBergomi antithetic pairing needs an even path count")
    half, n, dt = n_paths // 2, grid.n_steps, grid.dt
    raw = _normals(seed, half, (n, 2))
    zeta, xi = raw[:, :, 0], raw[:, :, 1]
    zv = np.concatenate([zeta, -zeta])
    c = np.sqrt(1.0 - spec.rho**2)
    zs = np.concatenate([spec.rho * xi + c * zeta, spec.rho * xi - c * zeta])

    H = spec.H
    g = moment_matching_points(H, grid) ** (H - 0.5)
    # phi(t_i) = sqrt(dt) * sum_{k=1..i} g_k * zv[i-k+1]
    toeplitz = np.zeros((n, n))
    for i in range(n):
        toeplitz[i, : i + 1] = g[: i + 1][::-1]
    phi = np.zeros((n_paths, n + 1))
    phi[:, 1:] = np.sqrt(dt) * zv @ toeplitz.T
    t = grid.times
    variance = spec.xi0 * np.exp(
        2 * spec.nu * np.sqrt(2 * H) * phi - 2 * spec.nu**2 * t ** (2 * H)
    )
    v_prev = variance[:, :-1]
    incr = -0.5 * dt * v_prev + np.sqrt(dt) * np.sqrt(v_prev) * zs
    logx = np.log(spec.x0) + np.concatenate([np.zeros((n_paths, 1)), np.cumsum(incr, 1)], 1)
    out = np.exp(logx)
    if return_noise:
        return out, {"zeta": zeta, "zv": zv, "zs": zs, "variance": variance, "log": logx}
    return out


def mixture_arrays(alpha: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mixture components have shapes {a.shape} and {b.shape}")
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    return alpha * a + (1.0 - alpha) * b


def simulate_array(spec, grid: SimGrid, n_paths: int, seed: int) -> np.ndarray:
    """(n_paths, n_steps + 1) values for any 1-d spec, mixtures included."""
    if isinstance(spec, GBM):
        return gbm_paths(spec, grid, n_paths, seed)
    if isinstance(spec, CEV):
        return cev_paths(spec, grid, n_paths, seed)
    if isinstance(spec, MeanReverting):
        return mean_reverting_paths(spec, grid, n_paths, seed)
    if isinstance(spec, RBergomi):
        return rbergomi_paths(spec, grid, n_paths + n_paths % 2, seed)[:n_paths]
    if isinstance(spec, Mixture):
        left = simulate_array(spec.left, grid, n_paths, derive_seed(seed, 0))
        right = simulate_array(spec.right, grid, n_paths, derive_seed(seed, 1))
        return mixture_arrays(spec.alpha, left, right)
    raise ConfigError(f"no 1-d simulator for {type(spec).__name__}")


def _bundle(values, grid, seed, spec):
    return PathBundle.from_arrays(grid.times, values, seed=seed, spec=spec_to_dict(spec))


def simulate_gbm(spec: GBM, grid: SimGrid, n_paths: int, seed: int) -> PathBundle:
    return _bundle(gbm_paths(spec, grid, n_paths, seed), grid, seed, spec)


def simulate_cev(spec: CEV, grid: SimGrid, n_paths: int, seed: int) -> PathBundle:
    return _bundle(cev_paths(spec, grid, n_paths, seed), grid, seed, spec)


def simulate_mean_reverting(spec: MeanReverting, grid: SimGrid, n_paths: int, seed: int) -> PathBundle:
    return _bundle(mean_reverting_paths(spec, grid, n_paths, seed), grid, seed, spec)


def simulate_rbergomi(spec: RBergomi, grid: SimGrid, n_paths: int, seed: int) -> PathBundle:
    return _bundle(rbergomi_paths(spec, grid, n_paths, seed), grid, seed, spec)


def simulate(spec, grid: SimGrid, n_paths: int, seed: int) -> PathBundle:
    if isinstance(spec, IdealGas):
        from .gas import simulate_ideal_gas

        return simulate_ideal_gas(spec, grid, seed)
    return _bundle(simulate_array(spec, grid, n_paths, seed), grid, seed, spec)


def mixture_paths(alpha: float, bundle_a: PathBundle, bundle_b: PathBundle) -> PathBundle:
    """Pathwise convex combination ``alpha * a + (1 - alpha) * b``."""
    ta, va = bundle_a.stacked()
    tb, vb = bundle_b.stacked()
    if not np.array_equal(ta, tb) or va.shape != vb.shape:
        raise ShapeMismatch("mixture components must share shape and time grid")
    spec = None
    if bundle_a.spec is not None and bundle_b.spec is not None:
        spec = {"kind": "Mixture", "alpha": alpha, "left": bundle_a.spec, "right": bundle_b.spec}
    return PathBundle.from_arrays(ta, mixture_arrays(alpha, va, vb), seed=bundle_a.seed, spec=spec)


def barrier_payoff(values: np.ndarray, strike: float, barrier: float) -> np.ndarray:
    """Down-and-in call payoff per path; the minimum runs over the grid incl. x0."""
    hit = values.min(axis=1) <= barrier
    return np.maximum(values[:, -1] - strike, 0.0) * hit


def price_barrier_mc(bundle, strike: float = 80.0, barrier: float = 85.0) -> float:
    """Undiscounted Monte Carlo price of a down-and-in call."""
    if isinstance(bundle, PathBundle):
        if bundle.dim != 1:
            raise ShapeMismatch("barrier pricing needs a 1-d bundle")
        payoff = [barrier_payoff(p.values.T, strike, barrier)[0] for p in bundle]
        return float(np.mean(payoff))
    return float(barrier_payoff(np.asarray(bundle), strike, barrier).mean())


__all__ = [
    "GBM", "CEV", "MeanReverting", "RBergomi", "Mixture", "IdealGas", "SimGrid",
    "sample_params", "simulate", "simulate_array", "simulate_gbm", "simulate_cev",
    "simulate_mean_reverting", "simulate_rbergomi", "mixture_paths", "price_barrier_mc",
    "spec_to_dict", "spec_from_dict", "spec_json", "derive_seed", "make_rng",
]
