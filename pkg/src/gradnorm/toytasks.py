"""Synthetic multitask regression benchmark.

Task ``i`` regresses ``sigma_i * tanh((B + eps_i) @ x)``: every task shares the
base matrix ``B`` and differs by a small perturbation ``eps_i`` and an output
scale ``sigma_i``.  Larger ``sigma_i`` means larger losses and larger
gradients, which is the imbalance the loss-weighting strategies address.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from gradnorm import linalg
from gradnorm.linalg import Rng

DEFAULT_INPUT_DIM = 250
DEFAULT_OUTPUT_DIM = 100
BASE_SCALE = 10.0
PERTURBATION_SCALE = 3.5
SIGMA_SPREAD = 50.0


@dataclass(frozen=True)
class ToyTaskSet:
    base: np.ndarray
    epsilons: tuple[np.ndarray, ...]
    sigmas: tuple[float, ...]
    input_dim: int
    output_dim: int
    seed: int
    _maps: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if any(e.shape != self.base.shape for e in self.epsilons):
            raise ValueError("every perturbation must match the base matrix shape")
        if len(self.sigmas) != len(self.epsilons):
            raise ValueError("need one sigma per task")
        if any(not s > 0 for s in self.sigmas):
            raise ValueError(f"sigmas must be positive, got {self.sigmas}")
        # Columns [i*out:(i+1)*out] hold (B + eps_i).T so all tasks share one product.
        maps = np.concatenate([(self.base + e).T for e in self.epsilons], axis=1)
        object.__setattr__(self, "_maps", np.ascontiguousarray(maps))

    @property
    def num_tasks(self) -> int:
        return len(self.sigmas)

    def targets(self, x: np.ndarray) -> list[np.ndarray]:
        """Exact targets for inputs ``x`` of shape ``(batch, input_dim)``."""
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise linalg.ShapeError(f"inputs have shape {x.shape}, tasks expect (*, {self.input_dim})")
        pre = np.tanh(linalg.matmul(x, self._maps))
        out = self.output_dim
        return [s * pre[:, i * out:(i + 1) * out] for i, s in enumerate(self.sigmas)]


class Batch(NamedTuple):
    inputs: np.ndarray
    targets: list[np.ndarray]


def sample_sigmas(rng: Rng, num_tasks: int, spread: float = SIGMA_SPREAD) -> list[float]:
    """``|N(0, spread)|`` draws, redrawing exact zeros."""
    out = []
    while len(out) < num_tasks:
        s = abs(float(rng.normal(1)[0])) * spread
        if s > 0.0:
            out.append(s)
    return out


def generate_taskset(
    seed: int,
    num_tasks: int,
    sigmas: Sequence[float] | None = None,
    input_dim: int = DEFAULT_INPUT_DIM,
    output_dim: int = DEFAULT_OUTPUT_DIM,
    base_scale: float = BASE_SCALE,
    perturbation_scale: float = PERTURBATION_SCALE,
    scale_is_variance: bool = False,
    sigma_spread: float = SIGMA_SPREAD,
) -> ToyTaskSet:
    """Build a task set deterministically from ``seed``.

    ``base_scale`` and ``perturbation_scale`` are standard deviations unless
    ``scale_is_variance`` is set, in which case their square roots are used.
    When ``sigmas`` is omitted they are sampled with :func:`sample_sigmas`.
    """
    if num_tasks < 1:
        raise ValueError("need at least one task")
    if sigmas is None:
        sigmas = sample_sigmas(Rng(linalg.derive_seed(seed, "sigmas")), num_tasks, sigma_spread)
    sigmas = tuple(float(s) for s in sigmas)
    if len(sigmas) != num_tasks:
        raise ValueError(f"expected {num_tasks} sigmas, got {len(sigmas)}")
    if any(not s > 0 for s in sigmas):
        raise ValueError(f"sigmas must be positive, got {sigmas}")
    base_std, eps_std = base_scale, perturbation_scale
    if scale_is_variance:
        base_std, eps_std = math.sqrt(base_scale), math.sqrt(perturbation_scale)

    base = linalg.gaussian_fill(Rng(linalg.derive_seed(seed, "base")), output_dim, input_dim, 0.0, base_std)
    eps = tuple(
        linalg.gaussian_fill(Rng(linalg.derive_seed(seed, "eps", i)), output_dim, input_dim, 0.0, eps_std)
        for i in range(num_tasks)
    )
    return ToyTaskSet(base, eps, sigmas, input_dim, output_dim, seed)


def sample_batch(taskset: ToyTaskSet, rng: Rng, batch_size: int) -> Batch:
    """Fresh standard-normal inputs and their exact targets."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    x = linalg.gaussian_fill(rng, batch_size, taskset.input_dim)
    return Batch(x, taskset.targets(x))


class Ranking(NamedTuple):
    order: list[int]
    tied: bool


def expected_initial_loss_ordering(taskset: ToyTaskSet) -> Ranking:
    """Tasks sorted by descending ``sigma**2`` (expected size of the initial loss)."""
    sq = [s * s for s in taskset.sigmas]
    order = sorted(range(len(sq)), key=lambda i: -sq[i])
    return Ranking(order, len(set(sq)) < len(sq))
