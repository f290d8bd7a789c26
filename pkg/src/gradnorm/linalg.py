"""Dense float64 matrices and a counter-based random stream.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The
helpers here validate shapes and route the heavy work through the selected
kernel backend.

The random stream is SplitMix64 evaluated at consecutive counter positions:
draw ``k`` of a stream seeded with ``s`` is ``mix(s + (k + 1) * 0x9E3779B97F4A7C15)``
with the standard SplitMix64 finalizer.  Uniforms take the top 53 bits
(``(z >> 11) + 0.5) / 2**53``, so they lie strictly inside (0, 1); normals
use Box-Muller on consecutive uniform pairs.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from gradnorm._backend import kernels

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def as_matrix(values, *, copy: bool = False) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous 2-D float64 array."""
    m = np.array(values, dtype=np.float64, copy=copy, order="C", ndmin=2)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    return m


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64)


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul takes 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return kernels.matmul(a, b)


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a.T @ b`` without materializing the transpose at the call site."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"cannot multiply ({a.shape[0]}x{a.shape[1]}).T by {b.shape[0]}x{b.shape[1]}")
    return kernels.matmul_tn(a, b)


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b.T``."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by ({b.shape[0]}x{b.shape[1]}).T")
    return kernels.matmul_nt(a, b)


def l2_norm(m) -> float:
    """Frobenius norm: square root of the sum of squared entries.

    Entries are scaled by the largest magnitude first so tiny or huge values
    neither underflow nor overflow when squared.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    scale = float(np.max(np.abs(m)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    return scale * math.sqrt(kernels.sum_squares(m / scale))


def relu(m: np.ndarray) -> np.ndarray:
    return kernels.relu(m)


def relu_derivative(m: np.ndarray) -> np.ndarray:
    return (m > 0.0).astype(np.float64)


_ELEMENTWISE: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "relu": relu,
    "relu_derivative": relu_derivative,
}


def map_elementwise(m: np.ndarray, f: str) -> np.ndarray:
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ValueError(f"unknown elementwise map {f!r}; choose from {sorted(_ELEMENTWISE)}") from None
    return fn(as_matrix(m))


def derive_seed(seed: int, *labels: int | str) -> int:
    """Deterministically derive a child seed from ``seed`` and a label path.

    Used to give each consumer (data, model init, test batch, ...) its own
    stream so that changing one consumer never shifts another's draws.
    """
    z = seed & _MASK64
    for label in labels:
        if isinstance(label, str):
            h = 0
            for ch in label.encode():
                h = ((h ^ ch) * 0x100000001B3) & _MASK64
            label = h
        z = int(kernels.splitmix_uint64(z ^ (label & _MASK64), 0, 1)[0])
    return z


class Rng:
    """Counter-based SplitMix64 stream.

    >>> r = Rng(7)
    >>> r.uniform(2).shape
    (2,)
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        if not 0 <= counter <= _MASK64:
            raise ValueError("counter must fit in 64 bits")
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def _advance(self, n: int) -> int:
        start = self.counter
        self.counter = (self.counter + n) & _MASK64
        return start

    def uint64(self, n: int) -> np.ndarray:
        return kernels.splitmix_uint64(self.seed, self._advance(n), n)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws from Uniform(0, 1), open at both ends."""
        return kernels.uniform(self.seed, self._advance(n), n)

    def normal(self, n: int) -> np.ndarray:
        start = self._advance(2 * ((n + 1) // 2))
        return kernels.gaussian(self.seed, start, n)

    def spawn(self, label: int | str) -> "Rng":
        return Rng(derive_seed(self.seed, label))


def gaussian_fill(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Matrix of IID normal draws with the given mean and standard deviation."""
    if not std >= 0.0:
        raise ValueError(f"std must be nonnegative, got {std}")
    draws = rng.normal(rows * cols).reshape(rows, cols)
    if std != 1.0:
        draws *= std
    if mean != 0.0:
        draws += mean
    return draws
