"""Shared-trunk ReLU MLP with per-task affine heads and exact backprop.

Layout convention: a layer maps ``x @ weight + bias`` with ``weight`` of shape
``(fan_in, fan_out)``, so a batch is a ``(batch, features)`` matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import count
from typing import Sequence

import numpy as np

from gradnorm import linalg
from gradnorm._backend import kernels
from gradnorm.linalg import Rng, ShapeError

_model_ids = count()


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpModel:
    """ReLU trunk shared by every task, followed by one affine head per task.

    ``shared_layer_index`` picks the trunk layer whose weight matrix is where
    per-task gradient norms are measured (the last trunk layer by default).
    """

    trunk: list[Dense]
    heads: list[Dense]
    shared_layer_index: int = -1
    version: int = 0
    uid: int = field(default_factory=lambda: next(_model_ids))

    def __post_init__(self):
        if not self.trunk:
            raise ValueError("model needs at least one trunk layer")
        if not self.heads:
            raise ValueError("model needs at least one task head")
        idx = self.shared_layer_index
        if idx < 0:
            idx += len(self.trunk)
        if not 0 <= idx < len(self.trunk):
            raise ValueError(f"shared_layer_index {self.shared_layer_index} does not address a trunk layer")
        self.shared_layer_index = idx
        width = self.trunk[0].fan_in
        for layer in self.trunk:
            if layer.fan_in != width or layer.bias.shape != (layer.fan_out,):
                raise ShapeError("trunk layer shapes do not chain")
            width = layer.fan_out
        for head in self.heads:
            if head.fan_in != width or head.bias.shape != (head.fan_out,):
                raise ShapeError("head shapes do not match the trunk output")

    @property
    def num_tasks(self) -> int:
        return len(self.heads)

    @property
    def input_dim(self) -> int:
        return self.trunk[0].fan_in

    @property
    def shared_weight(self) -> np.ndarray:
        return self.trunk[self.shared_layer_index].weight

    def layers(self) -> list[Dense]:
        return [*self.trunk, *self.heads]

    def parameters(self) -> list[np.ndarray]:
        """Every parameter array in a fixed order: trunk (W, b) pairs, then heads."""
        out = []
        for layer in self.layers():
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def touch(self) -> None:
        """Mark parameters as modified; invalidates outstanding caches."""
        self.version += 1

    def copy(self) -> "MlpModel":
        return MlpModel(
            trunk=[Dense(l.weight.copy(), l.bias.copy()) for l in self.trunk],
            heads=[Dense(l.weight.copy(), l.bias.copy()) for l in self.heads],
            shared_layer_index=self.shared_layer_index,
        )


@dataclass
class BatchCache:
    """Activations from one forward pass.

    ``activations[l]`` is the input to trunk layer ``l``; the last entry is
    the trunk output fed to every head.  ``preactivations[l]`` is trunk layer
    ``l``'s affine output before the ReLU.
    """

    activations: list[np.ndarray]
    preactivations: list[np.ndarray]
    batch_size: int
    model_uid: int
    model_version: int


@dataclass
class TaskGradients:
    """Unweighted per-task gradients.

    ``shared[i]`` is the gradient of task ``i``'s loss with respect to the
    shared weight matrix.  ``full[i]``, when requested, holds the gradient for
    every parameter in :meth:`MlpModel.parameters` order.
    """

    shared: list[np.ndarray]
    full: list[list[np.ndarray]] | None = None


def init_model(
    rng: Rng,
    input_dim: int,
    output_dim: int,
    num_tasks: int,
    hidden: int = 100,
    depth: int = 4,
    shared_layer_index: int = -1,
) -> MlpModel:
    """He-style Gaussian init (std ``sqrt(2 / fan_in)``), zero biases."""
    for name, v in (("input_dim", input_dim), ("output_dim", output_dim), ("num_tasks", num_tasks),
                    ("hidden", hidden), ("depth", depth)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")

    def dense(fan_in, fan_out):
        w = linalg.gaussian_fill(rng, fan_in, fan_out, 0.0, math.sqrt(2.0 / fan_in))
        return Dense(w, np.zeros(fan_out))

    widths = [input_dim] + [hidden] * depth
    trunk = [dense(a, b) for a, b in zip(widths[:-1], widths[1:])]
    heads = [dense(hidden, output_dim) for _ in range(num_tasks)]
    return MlpModel(trunk, heads, shared_layer_index=shared_layer_index)


def forward(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], BatchCache]:
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"input has shape {x.shape}, model expects (*, {model.input_dim})")
    a = np.ascontiguousarray(x, dtype=np.float64)
    acts, pre = [a], []
    for layer in model.trunk:
        z = kernels.add_bias(kernels.matmul(a, layer.weight), layer.bias)
        a = kernels.relu(z)
        pre.append(z)
        acts.append(a)
    preds = [kernels.add_bias(kernels.matmul(a, h.weight), h.bias) for h in model.heads]
    return preds, BatchCache(acts, pre, x.shape[0], model.uid, model.version)


def squared_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch and output dims of the squared residual."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return kernels.sum_squares(pred - target) / pred.size


def squared_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of :func:`squared_loss` with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return (2.0 / pred.size) * (pred - target)


def _trunk_sweep(model, cache, dz, top, bottom):
    """Backprop ``dz`` (gradient wrt trunk layer ``top``'s pre-activation) down to ``bottom``.

    Returns ``(grads, dz_bottom)`` where ``grads[l] = (dW, db)`` for ``l`` in
    ``bottom..top``.
    """
    grads = {}
    for l in range(top, bottom - 1, -1):
        layer = model.trunk[l]
        grads[l] = (linalg.matmul_tn(cache.activations[l], dz), dz.sum(axis=0))
        if l > bottom:
            da = linalg.matmul_nt(dz, layer.weight)
            dz = kernels.relu_backward(da, cache.preactivations[l - 1])
    return grads, dz


def backward(
    model: MlpModel,
    cache: BatchCache,
    residuals: Sequence[np.ndarray],
    weights: Sequence[float],
    full_task_grads: bool = False,
) -> tuple[list[np.ndarray], TaskGradients]:
    """Gradients of ``sum_i weights[i] * L_i`` and of each unweighted ``L_i``.

    ``residuals[i]`` is ``dL_i / dpred_i`` (see :func:`squared_loss_grad`).
    Each task is swept from its head down to the shared layer; below that a
    single sweep carries the weighted sum.
    """
    if cache.model_uid != model.uid or cache.model_version != model.version:
        raise ValueError("cache was produced by a different or since-updated model")
    T = model.num_tasks
    if len(residuals) != T or len(weights) != T:
        raise ValueError(f"expected {T} residuals and weights, got {len(residuals)} and {len(weights)}")
    top_act = cache.activations[-1]
    for r, h in zip(residuals, model.heads):
        if r.shape != (cache.batch_size, h.fan_out):
            raise ShapeError(f"residual shape {r.shape} does not match the cached batch")

    L = len(model.trunk) - 1
    k = model.shared_layer_index
    head_grads = []
    task_upper = []
    task_dz_k = []
    for r, h in zip(residuals, model.heads):
        head_grads.append((linalg.matmul_tn(top_act, r), r.sum(axis=0)))
        dz_top = kernels.relu_backward(linalg.matmul_nt(r, h.weight), cache.preactivations[L])
        grads, dz_k = _trunk_sweep(model, cache, dz_top, L, k)
        task_upper.append(grads)
        task_dz_k.append(dz_k)

    # Everything at or above the shared layer is linear in the task weights.
    trunk_total = {}
    for l in range(k, L + 1):
        trunk_total[l] = (
            sum(w * g[l][0] for w, g in zip(weights, task_upper)),
            sum(w * g[l][1] for w, g in zip(weights, task_upper)),
        )
    if k > 0:
        dz = sum(w * d for w, d in zip(weights, task_dz_k))
        da = linalg.matmul_nt(dz, model.trunk[k].weight)
        dz = kernels.relu_backward(da, cache.preactivations[k - 1])
        lower, _ = _trunk_sweep(model, cache, dz, k - 1, 0)
        trunk_total.update(lower)

    total = []
    for l in range(L + 1):
        total.extend(trunk_total[l])
    for w, (gw, gb) in zip(weights, head_grads):
        total.extend((w * gw, w * gb))

    full = None
    if full_task_grads:
        full = []
        for i in range(T):
            per = dict(task_upper[i])
            if k > 0:
                da = linalg.matmul_nt(task_dz_k[i], model.trunk[k].weight)
                dz = kernels.relu_backward(da, cache.preactivations[k - 1])
                lower, _ = _trunk_sweep(model, cache, dz, k - 1, 0)
                per.update(lower)
            flat = []
            for l in range(L + 1):
                flat.extend(per[l])
            for j in range(T):
                if j == i:
                    flat.extend(head_grads[i])
                else:
                    flat.extend((np.zeros_like(model.heads[j].weight), np.zeros_like(model.heads[j].bias)))
            full.append(flat)

    shared = [task_upper[i][k][0] for i in range(T)]
    return total, TaskGradients(shared=shared, full=full)


def shared_layer_grad_norm(task_grads: TaskGradients, task: int, w_i: float) -> float:
    """Norm of the gradient of ``w_i * L_i`` at the shared layer.

    The weighted loss is linear in ``w_i``, so this is ``w_i`` times the
    unweighted norm.
    """
    if w_i < 0:
        raise ValueError(f"task weight must be nonnegative, got {w_i}")
    return w_i * linalg.l2_norm(task_grads.shared[task])
