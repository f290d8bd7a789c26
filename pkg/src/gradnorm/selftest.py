"""Quick property checks run by ``gradnorm selftest``."""

from __future__ import annotations

import numpy as np

from gradnorm import balancer, gradcheck
from gradnorm._backend import load
from gradnorm.linalg import Rng, derive_seed


def _backprop(seed):
    worst = 0.0
    for k in range(20):
        inst = gradcheck.tiny_instance(Rng(derive_seed(seed, "backprop", k)))
        worst = max(worst, *gradcheck.network_gradient_errors(*inst))
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _weight_gradient(seed):
    worst = max(gradcheck.gradnorm_weight_gradient_error(Rng(derive_seed(seed, "lgrad", k))) for k in range(100))
    return worst < 1e-6, f"max relative error {worst:.2e}"


def _uncertainty_gradient(seed):
    worst = max(gradcheck.uncertainty_gradient_error(Rng(derive_seed(seed, "unc", k))) for k in range(100))
    return worst < 1e-6, f"max relative error {worst:.2e}"


def _weights_sum(seed):
    rng = Rng(derive_seed(seed, "sum"))
    state = balancer.BalancerState.create(5, alpha=1.5, initial_losses=np.ones(5))
    worst = 0.0
    for _ in range(200):
        balancer.gradnorm_step(state, 0.05 + rng.uniform(5), 0.1 + 10 * rng.uniform(5))
        worst = max(worst, abs(state.weights.sum() - 5))
    return worst < 1e-9, f"max |sum(w) - T| {worst:.1e}"


def _fixed_point(seed):
    g = np.array([0.7, 3.1])
    state = balancer.BalancerState.create(2, alpha=0.0, lr=0.025, initial_losses=np.ones(2))
    # Adam on an L1 objective only settles if the step size decays
    for _ in range(5):
        for _ in range(1000):
            balancer.gradnorm_step(state, np.ones(2), g)
        state.optimizer.lr *= 0.1
    G = state.weights * g
    err = abs(G[0] - G[1]) / G.mean()
    return err < 1e-3, f"relative gap in w*g {err:.1e}"


def _backends(seed):
    try:
        compiled = load("compiled")
    except ImportError:
        return True, "compiled core not built; skipped"
    python = load("python")
    rng = Rng(derive_seed(seed, "backends"))
    a = rng.normal(37 * 23).reshape(37, 23)
    b = rng.normal(23 * 19).reshape(23, 19)
    err = np.abs(compiled.matmul(a, b) - python.matmul(a, b)).max()
    same = np.array_equal(compiled.splitmix_uint64(seed, 5, 100), python.splitmix_uint64(seed, 5, 100))
    return bool(err < 1e-12 and same), f"matmul max diff {err:.1e}, integer streams equal: {same}"


CHECKS = (
    ("backprop vs finite differences", _backprop),
    ("weight gradient vs finite differences", _weight_gradient),
    ("uncertainty gradient vs finite differences", _uncertainty_gradient),
    ("weights sum to T", _weights_sum),
    ("alpha=0 fixed point", _fixed_point),
    ("compiled and python kernels agree", _backends),
)


def run_all(seed: int = 0):
    for name, check in CHECKS:
        ok, detail = check(seed)
        yield name, ok, detail
