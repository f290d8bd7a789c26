"""Central finite differences, used as an independent oracle for analytic gradients."""

from __future__ import annotations

import numpy as np

from gradnorm import balancer, network
from gradnorm.linalg import Rng


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences; ``x`` is perturbed in place and restored."""
    grad = np.empty_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


def tiny_instance(rng: Rng, max_dim: int = 4, max_tasks: int = 3):
    """Random small network, batch, targets and positive task weights."""
    u = rng.uniform(6)
    d_in = 1 + int(u[0] * max_dim)
    d_out = 1 + int(u[1] * max_dim)
    hidden = 2 + int(u[2] * max_dim)
    depth = 1 + int(u[3] * 3)
    T = 1 + int(u[4] * max_tasks)
    batch = 1 + int(u[5] * 5)
    shared = -1 - int(rng.uniform(1)[0] * depth)
    model = network.init_model(rng, d_in, d_out, T, hidden, depth, shared)
    for p in model.parameters():
        p += 0.1 * rng.normal(p.size).reshape(p.shape)
    x = rng.normal(batch * d_in).reshape(batch, d_in)
    targets = [rng.normal(batch * d_out).reshape(batch, d_out) for _ in range(T)]
    weights = 0.2 + rng.uniform(T) * 2.0
    return model, x, targets, weights


def network_gradient_errors(model, x, targets, weights, h: float = 1e-6) -> tuple[float, float]:
    """Worst relative error of the weighted-total and the per-task backprop gradients."""

    def task_losses():
        preds, _ = network.forward(model, x)
        return [network.squared_loss(p, t) for p, t in zip(preds, targets)]

    preds, cache = network.forward(model, x)
    residuals = [network.squared_loss_grad(p, t) for p, t in zip(preds, targets)]
    total, tg = network.backward(model, cache, residuals, weights, full_task_grads=True)
    worst_total = worst_task = 0.0
    for j, p in enumerate(model.parameters()):
        num = central_difference(lambda: float(np.dot(weights, task_losses())), p, h)
        worst_total = max(worst_total, relative_error(total[j], num))
        for i in range(model.num_tasks):
            num_i = central_difference(lambda: task_losses()[i], p, h)
            worst_task = max(worst_task, relative_error(tg.full[i][j], num_i))
    return worst_total, worst_task


def gradnorm_weight_gradient_error(rng: Rng, T: int | None = None, h: float = 1e-7) -> float:
    """Analytic dL_grad/dw against differences of L_grad with targets held fixed."""
    T = T or 2 + int(rng.uniform(1)[0] * 8)
    g = 0.1 + rng.uniform(T) * 5.0
    w = 0.1 + rng.uniform(T) * 2.0
    w *= T / w.sum()
    rates = balancer.relative_rates(0.1 + rng.uniform(T))
    alpha = float(rng.uniform(1)[0] * 3.0)
    targets = balancer.gradnorm_targets(float((w * g).mean()), rates, alpha)
    analytic = balancer.gradnorm_weight_gradient(g, w, targets)
    numeric = central_difference(lambda: balancer.gradnorm_loss(w * g, targets), w, h)
    return relative_error(analytic, numeric)


def uncertainty_gradient_error(rng: Rng, T: int | None = None, h: float = 1e-6) -> float:
    T = T or 1 + int(rng.uniform(1)[0] * 8)
    s = rng.normal(T)
    L = 0.01 + rng.uniform(T) * 10.0
    analytic = balancer.uncertainty_gradient(s, L)
    numeric = central_difference(lambda: balancer.uncertainty_loss(s, L), s, h)
    return relative_error(analytic, numeric)
