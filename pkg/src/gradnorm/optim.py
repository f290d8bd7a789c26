"""Adam with bias correction, used for both network parameters and loss weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gradnorm._backend import kernels
from gradnorm.linalg import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
            **hyper,
        )

    def reset(self) -> None:
        self.t = 0
        for a in (*self.m, *self.v):
            a.fill(0.0)


def adam_update(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
    """One Adam step, applied to ``params`` in place.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != m.shape or np.shape(g) != m.shape:
            raise ShapeError(f"parameter {p.shape} / gradient {np.shape(g)} / state {m.shape} mismatch")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_step(p, np.asarray(g, dtype=np.float64), m, v, state.lr, b1, b2, bc1, bc2, state.eps)
    return params
