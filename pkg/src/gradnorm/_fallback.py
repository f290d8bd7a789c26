"""Pure-Python (numpy) implementations of the hot kernels.

Same signatures and stream layout as the compiled ``_kernels`` extension.
The integer stream is bit-identical between the two; Gaussian draws agree to
libm rounding.
"""

import numpy as np

NAME = "python"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


def matmul(a, b):
    return np.matmul(a, b)


def matmul_tn(a, b):
    """``a.T @ b``."""
    return np.matmul(a.T, b)


def matmul_nt(a, b):
    """``a @ b.T``."""
    return np.matmul(a, b.T)


def splitmix_uint64(seed, counter, n):
    idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(counter)
    z = np.uint64(seed) + idx * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(seed, counter, n):
    z = splitmix_uint64(seed, counter, n)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def gaussian(seed, counter, n):
    """Box-Muller normals; consumes ``2 * ceil(n / 2)`` stream positions."""
    pairs = (n + 1) // 2
    u = uniform(seed, counter, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def relu(z):
    return np.maximum(z, 0.0)


def relu_backward(upstream, z):
    """``upstream`` masked to where ``z > 0``; zero elsewhere."""
    return np.where(z > 0.0, upstream, 0.0)


def add_bias(z, bias):
    return z + bias


def sum_squares(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.dot(a.ravel(), a.ravel()))


def adam_step(param, grad, m, v, lr, beta1, beta2, bc1, bc2, eps):
    """Fused in-place Adam update of one parameter array."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
