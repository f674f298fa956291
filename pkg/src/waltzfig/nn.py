"""Dense ReLU network with a softmax output, trained with cross-entropy and Adam.

Everything is plain numpy in float64.  Parameters are kept as a flat list
``[W1, b1, W2, b2, ...]`` with ``W`` shaped (fan_in, fan_out), so the Adam
moments are lists of the same shapes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import N_AXES, N_BINS, N_LABELS, FigureSample
from .errors import InputError, SchemaError

STD_FLOOR_VAR = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    depth: int = 2
    width: int = 64
    seed: int = 0
    input_dim: int = N_AXES * N_BINS
    output_dim: int = N_LABELS

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise InputError("depth and width must be positive")

    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * self.depth + [self.output_dim]


@dataclass
class MlpModel:
    spec: MlpSpec
    params: list  # [W1, b1, ..., W_out, b_out]
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    loss_trace: list = field(default_factory=list)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_std

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "spec": {"depth": s.depth, "width": s.width, "seed": s.seed,
                     "input_dim": s.input_dim, "output_dim": s.output_dim},
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "feature_std": None if self.feature_std is None else self.feature_std.tolist(),
            "layers": [{"W": W.tolist(), "b": b.tolist()}
                       for W, b in zip(self.params[::2], self.params[1::2])],
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        try:
            spec = MlpSpec(**d["spec"])
            params = []
            for layer in d["layers"]:
                params += [np.array(layer["W"], dtype=np.float64), np.array(layer["b"], dtype=np.float64)]
            mean = None if d.get("feature_mean") is None else np.array(d["feature_mean"])
            std = None if d.get("feature_std") is None else np.array(d["feature_std"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad MLP model JSON: {exc}") from None
        return cls(spec, params, mean, std, list(d.get("loss_trace", [])))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init_params(spec: MlpSpec, rng: np.random.Generator) -> list:
    """Glorot-uniform weights, zero biases."""
    params = []
    sizes = spec.layer_sizes()
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def init_model(spec: MlpSpec) -> MlpModel:
    return MlpModel(spec, init_params(spec, np.random.default_rng(spec.seed)))


def _flatten(samples) -> np.ndarray:
    if isinstance(samples, FigureSample):
        return samples.values.reshape(1, -1)
    if isinstance(samples, (list, tuple)):
        if not samples:
            return np.zeros((0, N_AXES * N_BINS))
        return np.stack([s.values.reshape(-1) if isinstance(s, FigureSample)
                         else np.asarray(s, dtype=np.float64).reshape(-1) for s in samples])
    X = np.asarray(samples, dtype=np.float64)
    return X.reshape(X.shape[0], -1) if X.ndim > 2 else np.atleast_2d(X)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logits(params: list, X: np.ndarray) -> tuple[np.ndarray, list]:
    """Output-layer logits and the per-layer inputs/pre-activations needed for backprop."""
    cache = []
    a = X
    n_layers = len(params) // 2
    for k in range(n_layers):
        W, b = params[2 * k], params[2 * k + 1]
        z = a @ W + b
        cache.append((a, z))
        a = np.maximum(z, 0.0) if k < n_layers - 1 else z
    return a, cache


def forward(model: MlpModel, sample) -> np.ndarray:
    """Class probabilities for one sample (a FigureSample or flat feature vector)."""
    X = model.standardize(_flatten(sample))
    z, _ = logits(model.params, X)
    return softmax(z)[0]


def predict_proba(model: MlpModel, samples) -> np.ndarray:
    X = _flatten(samples)
    if len(X) == 0:
        return np.zeros((0, model.spec.output_dim))
    z, _ = logits(model.params, model.standardize(X))
    return softmax(z)


def loss_and_grad(params: list, X: np.ndarray, y: np.ndarray) -> tuple[float, list]:
    """Mean cross-entropy of the softmax outputs and its gradient for each parameter.

    ``X`` must already be standardized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise InputError("empty batch")
    n = len(X)
    z, cache = logits(params, X)
    logp = log_softmax(z)
    loss = -float(np.mean(logp[np.arange(n), y]))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for k in range(len(cache) - 1, -1, -1):
        a_in, z_k = cache[k]
        if k < len(cache) - 1:
            delta = delta * (z_k > 0)
        grads[2 * k] = a_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ params[2 * k].T
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, params: list, grads: list) -> tuple[list, AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and a new state."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise InputError("parameter and gradient shapes differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [p - state.alpha * (mi / c1) / (np.sqrt(vi / c2) + state.eps)
           for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t, state.alpha, b1, b2, state.eps)


def feature_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = np.sqrt(np.maximum(X.var(axis=0), STD_FLOOR_VAR))
    return mean, std


def train(spec: MlpSpec, samples, labels, epochs: int = 150, batch_size: int = 32,
          alpha: float = 1e-3) -> MlpModel:
    """Minibatch Adam on standardized inputs; deterministic for a given ``spec.seed``.

    The returned model's ``loss_trace`` holds the mean minibatch loss of each epoch.
    """
    X = _flatten(samples)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) == 0:
        raise InputError("no training samples")
    if len(y) != len(X):
        raise InputError("sample and label counts differ")
    if X.shape[1] != spec.input_dim:
        raise InputError(f"expected {spec.input_dim} input features, got {X.shape[1]}")
    rng = np.random.default_rng(spec.seed)
    params = init_params(spec, rng)
    mean, std = feature_stats(X)
    Xs = (X - mean) / std
    state = AdamState.zeros_like(params, alpha=alpha)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(len(Xs))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grad(params, Xs[idx], y[idx])
            params, state = adam_step(state, params, grads)
            total += loss * len(idx)
        trace.append(total / len(order))
    return MlpModel(spec, params, mean, std, trace)
