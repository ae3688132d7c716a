"""Dense linear algebra and random-number substrate for all training math.

Matrices are 2-D numpy arrays in row-major (C) order with one sample per
row; that single convention holds everywhere in the package. Tests and
gradient checks run in double precision, training defaults to single
precision (the dtype is threaded through model constructors).

Randomness comes exclusively from :class:`Rng`, a thin wrapper over
numpy's PCG64. The platform default generator is never used, so a seed
pins the exact value stream regardless of host.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

DEFAULT_DTYPE = np.float64


def as_matrix(data, dtype=None) -> np.ndarray:
    """Coerce nested sequences / arrays to a 2-D C-order float array."""
    m = np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE, order="C")
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def ensure_finite(m: np.ndarray, context: str) -> np.ndarray:
    """Reject NaN/Inf; non-finite values are an error state, never silent."""
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"non-finite values in {context}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with shape validation and a finiteness guard."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul result")


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("add", a, b)
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("sub", a, b)
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("mul", a, b)
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * s


def map_values(a: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function elementwise (fn must be numpy-vectorizable)."""
    out = fn(a)
    _check_same_shape("map", a, np.asarray(out))
    return out


def child_seed(parent_seed: int, *path: int) -> np.random.SeedSequence:
    """Deterministic (parent_seed, *path) -> child seed derivation.

    The path is a tuple of non-negative integers (a namespace chain), so
    independent consumers of one root seed can never collide. Parallel or
    multi-component code must fork per-task generators through this
    function instead of sharing one Rng.
    """
    if not path:
        raise ValueError("child_seed requires at least one path index")
    return np.random.SeedSequence(entropy=parent_seed, spawn_key=tuple(path))


class Rng:
    """Seedable 64-bit generator (PCG64) with a reproducible stream.

    Identical seeds produce identical value streams on every platform.
    Instances are single-owner: never share one across threads; derive
    children via :meth:`child` instead.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self.seed: int | tuple = (seed.entropy, tuple(seed.spawn_key))
            self._gen = np.random.Generator(np.random.PCG64(seed))
        else:
            self.seed = int(seed)
            self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, *path: int) -> "Rng":
        if not isinstance(self.seed, int):
            raise ValueError("child derivation is only defined from a root Rng")
        return Rng(child_seed(self.seed, *path))

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        """Draws in [lo, hi); advances state deterministically."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got lo={lo} hi={hi}")
        return self._gen.uniform(lo, hi, size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffled(self, items: Sequence) -> list:
        order = self._gen.permutation(len(items))
        return [items[i] for i in order]
