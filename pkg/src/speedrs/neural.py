"""Small fully connected regressor with hand-written backprop and AdamW."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimMismatch, NonFiniteLoss

ACTIVATIONS = ("relu", "tanhshrink")
CHECKPOINT_MAGIC = "speedrs-mlp"
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    width: int
    activation: str = "relu"
    n_hidden: int = 3

    def __post_init__(self):
        if self.input_dim < 1 or self.width < 1:
            raise ConfigError("layer widths must be positive")
        if self.n_hidden != 3:
            raise ConfigError("the network has exactly three hidden layers")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + (self.width,) * self.n_hidden + (1,)


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list  # weights[l] has shape (fan_in, fan_out)
    biases: list

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def load_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for arr in (a for pair in zip(self.weights, self.biases) for a in pair):
            arr[...] = vec[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size
        if pos != len(vec):
            raise DimMismatch(f"expected {pos} parameters, got {len(vec)}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def mlp_init(spec: MlpSpec, seed: int) -> Mlp:
    """He-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return Mlp(spec, weights, biases)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z - np.tanh(z)


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.tanh(z) ** 2  # 1 - sech^2


def tanhshrink(z):
    return _act(np.asarray(z, dtype=float), "tanhshrink")


def mlp_forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Outputs for a batch (n, input_dim) -> (n,), or a single vector -> scalar."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != model.spec.input_dim:
        raise DimMismatch(f"input has {h.shape[1]} features, network expects {model.spec.input_dim}")
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = _act(h, model.spec.activation)
    out = h[:, 0]
    return out[0] if single else out


def mse_and_grad(model: Mlp, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its exact gradient (lists matching weights/biases)."""
    kind = model.spec.activation
    pre, post = [], [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = _act(z, kind) if i < last else z
        post.append(h)
    resid = h[:, 0] - y
    loss = float(np.mean(resid**2))
    delta = (2.0 / len(y)) * resid[:, None]
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(last, -1, -1):
        if i < last:
            delta = delta * _act_grad(pre[i], kind)
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ model.weights[i].T
    return loss, gw, gb


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    initial_lr: float = 5e-4
    final_lr_ratio: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if not self.initial_lr > 0 or not 0 < self.final_lr_ratio <= 1:
            raise ConfigError("learning-rate settings out of range")

    def lr_at(self, epoch: int) -> float:
        """Exponential decay reaching ``final_lr_ratio`` at the last epoch."""
        if self.epochs == 1:
            return self.initial_lr
        return self.initial_lr * self.final_lr_ratio ** (epoch / (self.epochs - 1))


@dataclass
class AdamW:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)

    def step(self, params: list, grads: list, decay_mask: list) -> None:
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v, decay in zip(params, grads, self._m, self._v, decay_mask):
            if decay and self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mlp_train(model: Mlp, train, cfg: TrainConfig, valid=None):
    """Mini-batch AdamW on MSE. Returns (trained copy, history dict).

    ``train``/``valid`` are ``(X, y)`` pairs; weight decay is decoupled and
    applied to weight matrices only.
    """
    model = model.copy()
    X, y = (np.asarray(a, dtype=float) for a in train)
    if len(y) == 0:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(lr=cfg.initial_lr, weight_decay=cfg.weight_decay)
    params = [a for pair in zip(model.weights, model.biases) for a in pair]
    mask = [True, False] * len(model.weights)
    history = {"train_mse": [], "valid_mse": []}
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(invalid="ignore", over="ignore"):  # reported just below
                loss, gw, gb = mse_and_grad(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch offset {start}")
            opt.step(params, [g for pair in zip(gw, gb) for g in pair], mask)
        history["train_mse"].append(mse(model, X, y))
        if valid is not None:
            history["valid_mse"].append(mse(model, *valid))
    if not math.isfinite(history["train_mse"][-1]):
        raise NonFiniteLoss("training diverged")
    return model, history


def mse(model: Mlp, X, y) -> float:
    pred = mlp_forward(model, np.asarray(X, dtype=float))
    return float(np.mean((pred - np.asarray(y, dtype=float)) ** 2))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def standardize_fit(X) -> Standardizer:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ConfigError("standardizer needs a 2-d array with at least two rows")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def standardize_apply(s: Standardizer, X) -> np.ndarray:
    return s.apply(X)


def split_dataset(n_rows: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split into (train_idx, valid_idx)."""
    if n_rows < 2:
        raise ConfigError("need at least two rows to split")
    order = np.random.default_rng(seed).permutation(n_rows)
    cut = min(max(int(round(ratio * n_rows)), 1), n_rows - 1)
    return order[:cut], order[cut:]


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model: Mlp, standardizer: Standardizer | None = None, **meta) -> None:
    """One JSON header line, then the float64 little-endian parameter blob."""
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "standardizer": standardizer.to_dict() if standardizer is not None else None,
        "n_params": model.n_params,
        "meta": meta,
    }
    blob = model.flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path):
    """Returns (model, standardizer or None, meta dict)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    if header.get("format") != CHECKPOINT_MAGIC or header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    spec = MlpSpec(**header["spec"])
    model = mlp_init(spec, 0)
    vec = np.frombuffer(blob, dtype="<f8")
    if len(vec) != header["n_params"]:
        raise ConfigError(f"{path}: truncated weight blob")
    model.load_flat(vec.astype(float))
    std = header["standardizer"]
    return model, (Standardizer.from_dict(std) if std else None), header["meta"]
