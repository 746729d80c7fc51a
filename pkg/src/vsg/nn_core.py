"""Minimal dense numerical kernel: MLPs, ReLU, sigmoid, dropout, Adam.

Everything runs in float64 with hand-derived reverse-mode gradients and
cached activations; there is no autodiff tape. Forward passes are pure, and
only explicit backward / optimizer calls mutate parameter state, so inference
on frozen parameters is safe to run concurrently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError


class Parameter:
    """A named tensor with a shape-matched gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamStore:
    """Registry of named parameters plus the seed that initialized them."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def parameters(self) -> list[Parameter]:
        return [self._params[n] for n in self.names()]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def require_finite_grads(self) -> None:
        for name in self.names():
            if not np.all(np.isfinite(self._params[name].grad)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: self._params[n].value for n in self.names()}


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch on sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(
    x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time.

    Returns (output, mask); eval mode passes the input through untouched.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(np.float64)
    return x * mask / (1.0 - rate), mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray, rate: float) -> np.ndarray:
    if rate == 0.0:
        return dy
    return dy * mask / (1.0 - rate)


class Mlp:
    """Fully connected net: ReLU on hidden layers, identity on the output.

    Parameters are registered in a ParamStore under ``prefix.W{l}`` /
    ``prefix.b{l}`` and initialized Kaiming-uniform with zero biases.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        store: ParamStore,
        prefix: str,
        rng: np.random.Generator,
    ):
        if len(layer_sizes) < 2:
            raise DimensionError("an MLP needs at least an input and an output size")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(store.add(f"{prefix}.W{l}", w))
            self.biases.append(store.add(f"{prefix}.b{l}", np.zeros(fan_out)))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """x is (N, input_dim); returns (y, cache) with y (N, output_dim)."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise DimensionError(
                f"input width {x.shape[1]} does not match first layer size {self.input_dim}"
            )
        cache = []
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.value + b.value
            if l < last:
                a = relu(z)
            else:
                a = z
            cache.append((h, z))
            h = a
        if squeeze:
            return h[0], cache
        return h, cache

    def backward(self, cache: list, dy: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients (+=) and return the input gradient."""
        dy = np.asarray(dy, dtype=np.float64)
        squeeze = dy.ndim == 1
        if squeeze:
            dy = dy[None, :]
        if len(cache) != len(self.weights):
            raise DimensionError("cache does not match this MLP")
        da = dy
        last = len(self.weights) - 1
        for l in range(last, -1, -1):
            h, z = cache[l]
            if h.shape[0] != da.shape[0] or da.shape[1] != self.weights[l].value.shape[1]:
                raise DimensionError("stale cache shape in MLP backward")
            if l < last:
                dz = da * (z > 0)
            else:
                dz = da
            self.weights[l].grad += h.T @ dz
            self.biases[l].grad += dz.sum(axis=0)
            da = dz @ self.weights[l].value.T
        if squeeze:
            return da[0]
        return da


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p.name: np.zeros_like(p.value) for p in store.parameters()}
        self._v = {p.name: np.zeros_like(p.value) for p in store.parameters()}

    def step(self) -> None:
        self.store.require_finite_grads()
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.store.parameters():
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def numerical_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.shape[0]):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the usual gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))
