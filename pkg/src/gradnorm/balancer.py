"""Loss-weighting strategies: GradNorm and the equal / static / uncertainty baselines.

GradNorm keeps one weight per task.  Each step it compares every task's
weighted gradient norm at the shared layer against a target
``mean_norm * r_i ** alpha`` (``r_i`` is the task's loss ratio relative to
the task-mean ratio), takes an L1 loss between the two, and moves the weights
down that loss with targets held constant.  Weights are then rescaled to sum
to the number of tasks.

Because ``G_i = w_i * g_i`` where ``g_i`` is the unweighted norm, the weight
gradient is available in closed form and no second-order backprop is needed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gradnorm.optim import AdamState, adam_update

log = logging.getLogger(__name__)

DEFAULT_WEIGHT_FLOOR = 1e-4
DEFAULT_WEIGHT_LR = 0.025


def _vec(values, name="values") -> np.ndarray:
    a = np.array(values, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError(f"{name} must be nonempty")
    return a


def theoretical_initial_loss(num_classes: int) -> float:
    """Expected cross-entropy of a uniform guess over ``num_classes`` classes."""
    if num_classes < 2:
        raise ValueError("need at least two classes for a positive initial loss")
    return math.log(num_classes)


def capture_initial_losses(
    losses: Sequence[float] | None = None,
    *,
    num_classes: int | Sequence[int] | None = None,
    num_tasks: int | None = None,
) -> np.ndarray:
    """Record ``L_i(0)``: measured first-step losses, or ``log(C)`` per task.

    Exactly one of ``losses`` and ``num_classes`` must be given.  A scalar
    ``num_classes`` is broadcast over ``num_tasks`` tasks.
    """
    if (losses is None) == (num_classes is None):
        raise ValueError("pass either measured losses or num_classes")
    if losses is not None:
        out = _vec(losses, "losses").copy()
    else:
        if np.ndim(num_classes) == 0:
            if num_tasks is None:
                raise ValueError("num_tasks is required with a scalar num_classes")
            num_classes = [num_classes] * num_tasks
        out = np.array([theoretical_initial_loss(int(c)) for c in num_classes])
    if not np.all(np.isfinite(out)) or np.any(out <= 0.0):
        raise ValueError(f"initial losses must be finite and positive, got {out.tolist()}")
    return out


def loss_ratios(losses, initial_losses) -> np.ndarray:
    """``L_i(t) / L_i(0)``, the inverse training rate of each task."""
    initial = _vec(initial_losses, "initial_losses")
    if np.any(initial <= 0.0):
        raise ValueError("initial losses must be positive")
    return _vec(losses, "losses") / initial


def relative_rates(ratios) -> np.ndarray:
    """Loss ratios divided by their task mean, so the result averages to one."""
    ratios = _vec(ratios, "ratios")
    mean = ratios.mean()
    if not mean > 0.0:
        raise ValueError("mean loss ratio must be positive; all tasks at zero loss is degenerate")
    return ratios / mean


def gradnorm_targets(mean_norm: float, rates, alpha: float) -> np.ndarray:
    rates = _vec(rates, "rates")
    if mean_norm < 0.0:
        raise ValueError("mean gradient norm must be nonnegative")
    if np.any(rates <= 0.0):
        raise ValueError("relative rates must be positive")
    return mean_norm * rates ** alpha


def gradnorm_loss(norms, targets) -> float:
    """L1 distance between actual and target gradient norms."""
    norms, targets = _vec(norms, "norms"), _vec(targets, "targets")
    if norms.shape != targets.shape:
        raise ValueError("norms and targets differ in length")
    return float(np.abs(norms - targets).sum())


def gradnorm_weight_gradient(unweighted_norms, weights, targets) -> np.ndarray:
    """d(gradnorm_loss)/dw with targets held constant.

    With ``G_i = w_i * g_i`` the derivative is ``sign(G_i - target_i) * g_i``;
    ``sign(0)`` is taken as 0.
    """
    g = _vec(unweighted_norms, "unweighted_norms")
    w = _vec(weights, "weights")
    return np.sign(w * g - _vec(targets, "targets")) * g


def renormalize(weights, num_tasks: int | None = None, floor: float = 0.0) -> np.ndarray:
    """Rescale so the weights sum to ``num_tasks``; entries are kept at or above ``floor``.

    Entries that would fall below ``floor`` are pinned there and the remaining
    mass is rescaled over the others.
    """
    w = _vec(weights, "weights").copy()
    T = w.size if num_tasks is None else num_tasks
    total = w.sum()
    if not total > 0.0:
        raise ValueError(f"weights must have a positive sum, got {total}")
    w *= T / total
    if floor <= 0.0 or np.all(w >= floor):
        return w
    if floor * w.size > T:
        raise ValueError("weight floor is too high for the requested sum")
    pinned = np.zeros(w.size, dtype=bool)
    while True:
        newly = (w < floor) & ~pinned
        if not newly.any():
            return w
        pinned |= newly
        w[pinned] = floor
        free = ~pinned
        w[free] *= (T - floor * pinned.sum()) / w[free].sum()


@dataclass(frozen=True)
class RateSnapshot:
    loss_ratios: tuple[float, ...]
    relative_rates: tuple[float, ...]
    grad_norms: tuple[float, ...]
    mean_grad_norm: float
    targets: tuple[float, ...]


@dataclass
class BalancerState:
    weights: np.ndarray
    alpha: float
    optimizer: AdamState
    initial_losses: np.ndarray | None = None
    weight_floor: float = DEFAULT_WEIGHT_FLOOR
    persistent_optimizer: bool = True
    warned: bool = False

    @classmethod
    def create(
        cls,
        num_tasks: int,
        alpha: float,
        lr: float = DEFAULT_WEIGHT_LR,
        weight_floor: float = DEFAULT_WEIGHT_FLOOR,
        initial_losses=None,
        persistent_optimizer: bool = True,
    ) -> "BalancerState":
        if alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        w = np.ones(num_tasks)
        return cls(
            weights=w,
            alpha=float(alpha),
            optimizer=AdamState.for_params([w], lr=lr),
            initial_losses=None if initial_losses is None else capture_initial_losses(initial_losses),
            weight_floor=weight_floor,
            persistent_optimizer=persistent_optimizer,
        )

    @property
    def num_tasks(self) -> int:
        return self.weights.size


def gradnorm_step(state: BalancerState, losses, unweighted_norms) -> tuple[BalancerState, RateSnapshot, float]:
    """One GradNorm weight update.

    ``unweighted_norms[i]`` is ``||grad_W L_i||``.  The network update for this
    step must use the weights as they were *before* this call.
    """
    if state.initial_losses is None:
        raise ValueError("initial losses have not been captured")
    T = state.num_tasks
    losses = _vec(losses, "losses")
    g = _vec(unweighted_norms, "unweighted_norms")
    if losses.size != T or g.size != T:
        raise ValueError(f"expected {T} losses and norms")
    if np.any(g < 0.0):
        raise ValueError("gradient norms must be nonnegative")

    w = state.weights
    norms = w * g
    mean_norm = float(norms.mean())
    ratios = loss_ratios(losses, state.initial_losses)
    rates = relative_rates(ratios)
    targets = gradnorm_targets(mean_norm, rates, state.alpha)
    lgrad = gradnorm_loss(norms, targets)
    grad = gradnorm_weight_gradient(g, w, targets)

    if not state.persistent_optimizer:
        state.optimizer.reset()
    adam_update(state.optimizer, [w], [grad])
    # Adam may step a weight through zero; clip before rescaling.
    np.maximum(w, state.weight_floor, out=w)
    w[:] = renormalize(w, T, state.weight_floor)

    if not state.warned and np.any(w > 0.9 * T):
        log.warning("task weight %.4g exceeds 0.9*T; a task may be stuck at a constant loss", w.max())
        state.warned = True

    snap = RateSnapshot(
        loss_ratios=tuple(ratios.tolist()),
        relative_rates=tuple(rates.tolist()),
        grad_norms=tuple(norms.tolist()),
        mean_grad_norm=mean_norm,
        targets=tuple(targets.tolist()),
    )
    return state, snap, lgrad


@dataclass
class UncertaintyState:
    """Learned per-task log-variances ``s``; effective weights are ``exp(-s)``."""

    log_variances: np.ndarray
    optimizer: AdamState

    @classmethod
    def create(cls, num_tasks: int, lr: float = DEFAULT_WEIGHT_LR) -> "UncertaintyState":
        s = np.zeros(num_tasks)
        return cls(s, AdamState.for_params([s], lr=lr))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(-self.log_variances)


def uncertainty_loss(log_variances, losses) -> float:
    s, L = _vec(log_variances), _vec(losses)
    return float(np.sum(np.exp(-s) * L + s))


def uncertainty_gradient(log_variances, losses) -> np.ndarray:
    """d/ds of ``sum(exp(-s) * L + s)``."""
    s, L = _vec(log_variances), _vec(losses)
    return 1.0 - np.exp(-s) * L


def uncertainty_step(state: UncertaintyState, losses) -> tuple[UncertaintyState, np.ndarray, float]:
    """Returns the state after one Adam step on ``s``, plus the pre-step weights and total loss."""
    losses = _vec(losses, "losses")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    weights = state.weights
    total = uncertainty_loss(state.log_variances, losses)
    adam_update(state.optimizer, [state.log_variances], [uncertainty_gradient(state.log_variances, losses)])
    return state, weights, total


def equal_weights(num_tasks: int) -> np.ndarray:
    return np.ones(num_tasks)


def static_weights(w_fixed) -> np.ndarray:
    w = _vec(w_fixed, "w_fixed")
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("static weights must be finite and positive")
    return renormalize(w)


@dataclass
class StepInfo:
    """What a strategy reports for one training step (for tracing)."""

    weights: np.ndarray
    snapshot: RateSnapshot | None = None
    lgrad: float = float("nan")


class Strategy:
    """Common surface the training loop drives.

    ``weights`` are the current loss weights used for the network update;
    ``observe`` is called once per step, after the network gradient has been
    taken, and may update the weights for the next step.
    """

    name = "base"
    needs_norms = False
    renormalizes = True

    @property
    def weights(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self, losses, unweighted_norms=None) -> StepInfo:
        raise NotImplementedError


class GradNorm(Strategy):
    name = "gradnorm"
    needs_norms = True

    def __init__(self, num_tasks: int, alpha: float, lr: float = DEFAULT_WEIGHT_LR,
                 weight_floor: float = DEFAULT_WEIGHT_FLOOR, persistent_optimizer: bool = True,
                 initial_losses=None):
        self.state = BalancerState.create(num_tasks, alpha, lr, weight_floor, initial_losses, persistent_optimizer)

    @property
    def weights(self) -> np.ndarray:
        return self.state.weights

    def observe(self, losses, unweighted_norms=None) -> StepInfo:
        if unweighted_norms is None:
            raise ValueError("GradNorm needs the unweighted shared-layer norms")
        if self.state.initial_losses is None:
            self.state.initial_losses = capture_initial_losses(losses)
        _, snap, lgrad = gradnorm_step(self.state, losses, unweighted_norms)
        return StepInfo(self.state.weights.copy(), snap, lgrad)


class EqualWeights(Strategy):
    name = "equal"

    def __init__(self, num_tasks: int):
        self._w = equal_weights(num_tasks)

    @property
    def weights(self) -> np.ndarray:
        return self._w

    def observe(self, losses, unweighted_norms=None) -> StepInfo:
        return StepInfo(self._w.copy())


class StaticWeights(EqualWeights):
    name = "static"

    def __init__(self, w_fixed):
        self._w = static_weights(w_fixed)


class Uncertainty(Strategy):
    name = "uncertainty"
    renormalizes = False

    def __init__(self, num_tasks: int, lr: float = DEFAULT_WEIGHT_LR):
        self.state = UncertaintyState.create(num_tasks, lr)
        self._w = self.state.weights

    @property
    def weights(self) -> np.ndarray:
        return self._w

    def observe(self, losses, unweighted_norms=None) -> StepInfo:
        uncertainty_step(self.state, losses)
        self._w = self.state.weights
        return StepInfo(self._w.copy())
