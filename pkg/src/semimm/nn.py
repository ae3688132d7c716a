"""Layers with explicit forward/backward passes, Adam, and step-decay LR.

Every layer caches what its backward pass needs during a train-mode
forward; backward accumulates parameter gradients (+=) and returns the
gradient w.r.t. its input. Eval mode disables dropout and is safe to run
concurrently on a frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import DEFAULT_DTYPE, Rng

TRAIN = "train"
EVAL = "eval"


class Parameter:
    """A named tensor with a gradient accumulator of identical shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Layer:
    name: str = "layer"

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def init_linear_weight(in_dim: int, out_dim: int, rng: Rng, dtype=DEFAULT_DTYPE) -> np.ndarray:
    # uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] keeps early activations bounded
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, (in_dim, out_dim)).astype(dtype)


class Linear(Layer):
    """y = x @ weight + bias with weight shaped (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng | None = None,
                 dtype=DEFAULT_DTYPE, name: str = "linear"):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            weight = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            weight = init_linear_weight(in_dim, out_dim, rng, dtype)
        self.weight = Parameter(f"{name}.weight", weight)
        self.bias = Parameter(f"{name}.bias", np.zeros(out_dim, dtype=dtype))
        self._x = None

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"layer {self.name!r} expects input width {self.in_dim}, got {x.shape}")
        self._x = x if mode == TRAIN else None
        return x @ self.weight.value + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError(f"backward on {self.name!r} without a train-mode forward")
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class PRelu(Layer):
    """max(0, x) + a * min(0, x) with a single learnable scalar slope."""

    def __init__(self, init: float = 0.25, dtype=DEFAULT_DTYPE, name: str = "prelu"):
        self.name = name
        self.slope = Parameter(f"{name}.slope", np.array([init], dtype=dtype))
        self._x = None

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        self._x = x if mode == TRAIN else None
        a = self.slope.value[0]
        return np.where(x >= 0, x, a * x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError(f"backward on {self.name!r} without a train-mode forward")
        x = self._x
        neg = x < 0
        self.slope.grad += np.sum(grad * x * neg, dtype=self.slope.value.dtype)
        return grad * np.where(neg, self.slope.value[0], 1.0)

    def parameters(self) -> list[Parameter]:
        return [self.slope]


class Relu(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        mask = x > 0
        self._mask = mask if mode == TRAIN else None
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError(f"backward on {self.name!r} without a train-mode forward")
        return grad * self._mask


class Dropout(Layer):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Eval mode is the identity and consumes no randomness. `fixed_mask`
    pins the train-mode mask, which gradient checks use to keep the loss
    a deterministic function of the parameters.
    """

    def __init__(self, rate: float, rng: Rng | None = None, name: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.name = name
        self.rate = rate
        self.rng = rng
        self.fixed_mask: np.ndarray | None = None
        self._mask = None

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        if mode != TRAIN or self.rate == 0.0:
            self._mask = np.float64(1.0) if mode == TRAIN else None
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            if self.rng is None:
                raise RuntimeError(f"dropout {self.name!r} has no rng for train mode")
            keep = self.rng.uniform(0.0, 1.0, x.shape) >= self.rate
            mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError(f"backward on {self.name!r} without a train-mode forward")
        return grad * self._mask


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = "net"):
        self.name = name
        self.layers = layers

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def count_parameters(params: Iterable[Parameter]) -> int:
    return int(sum(p.value.size for p in params))


class Adam:
    """Bias-corrected Adam with classic (gradient-side) L2 regularization.

    The L2 term adds weight_decay * param to the gradient before the
    moment updates; decay is not decoupled from the adaptive scaling.
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class StepLrSchedule:
    """lr(epoch) = initial_lr * gamma ** (epoch // step_size)."""

    initial_lr: float
    gamma: float = 1.0
    step_size: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {self.step_size}")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {epoch}")
        return self.initial_lr * self.gamma ** (epoch // self.step_size)
