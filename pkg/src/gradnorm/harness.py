"""Training loop and the experiments built on it."""

from __future__ import annotations

import copy
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gradnorm import balancer, linalg, network, toytasks
from gradnorm.config import ExperimentConfig
from gradnorm.linalg import Rng
from gradnorm.optim import AdamState, adam_update

log = logging.getLogger(__name__)


@dataclass
class TraceRow:
    step: int
    weights: tuple[float, ...]
    train_loss: tuple[float, ...]
    test_loss: tuple[float, ...]
    ratios: tuple[float, ...]
    rates: tuple[float, ...]
    gnorms: tuple[float, ...]
    gbar: float
    lgrad: float


@dataclass
class RunRecord:
    config: ExperimentConfig
    sigmas: tuple[float, ...]
    rows: list[TraceRow] = field(default_factory=list)
    diverged: bool = False
    message: str = ""
    elapsed_seconds: float = 0.0

    @property
    def num_tasks(self) -> int:
        return len(self.sigmas)

    def weights_array(self) -> np.ndarray:
        return np.array([r.weights for r in self.rows])

    def test_loss_array(self) -> np.ndarray:
        return np.array([r.test_loss for r in self.rows])

    def summary(self) -> dict:
        out = {
            "strategy": self.config.strategy.name,
            "num_tasks": self.num_tasks,
            "sigmas": list(self.sigmas),
            "steps_completed": self.rows[-1].step if self.rows else 0,
            "diverged": self.diverged,
            "message": self.message,
        }
        if self.rows and not self.diverged:
            out["task_normalized_test_loss"] = task_normalized_test_loss(self)
            out["final_test_loss_ratios"] = normalized_test_losses(self).tolist()
            out["time_averaged_weights"] = time_averaged_weights(self).tolist()
        return out


class Divergence(RuntimeError):
    pass


def _evaluate(model, test_batch) -> tuple[float, ...]:
    preds, _ = network.forward(model, test_batch.inputs)
    return tuple(network.squared_loss(p, t) for p, t in zip(preds, test_batch.targets))


def make_strategy(config: ExperimentConfig) -> balancer.Strategy:
    spec, opt = config.strategy, config.optimizer
    T = config.taskset.num_tasks
    if spec.name == "gradnorm":
        return balancer.GradNorm(T, spec.alpha, lr=opt.weight_lr, weight_floor=opt.weight_floor,
                                 persistent_optimizer=opt.persistent_weight_optimizer)
    if spec.name == "equal":
        return balancer.EqualWeights(T)
    if spec.name == "static":
        return balancer.StaticWeights(spec.weights)
    if spec.name == "uncertainty":
        return balancer.Uncertainty(T, lr=opt.weight_lr)
    raise ValueError(f"unknown strategy {spec.name!r}")


def build_taskset(config: ExperimentConfig) -> toytasks.ToyTaskSet:
    ts = config.taskset
    return toytasks.generate_taskset(
        ts.seed, ts.num_tasks, ts.sigmas, ts.input_dim, ts.output_dim,
        base_scale=ts.base_scale, perturbation_scale=ts.perturbation_scale,
        scale_is_variance=ts.scale_is_variance, sigma_spread=ts.sigma_spread,
    )


def build_model(config: ExperimentConfig) -> network.MlpModel:
    m, ts = config.model, config.taskset
    rng = Rng(linalg.derive_seed(m.seed, "init"))
    model = network.init_model(rng, ts.input_dim, ts.output_dim, ts.num_tasks, m.hidden, m.depth,
                               m.shared_layer_index)
    if m.tied_heads:
        for h in model.heads[1:]:
            h.weight[:] = model.heads[0].weight
            h.bias[:] = model.heads[0].bias
    return model


def resolve(config: ExperimentConfig) -> ExperimentConfig:
    """Copy of ``config`` with sampled sigmas written out explicitly."""
    out = copy.deepcopy(config)
    out.taskset.sigmas = list(build_taskset(config).sigmas)
    return out.validate()


def train_run(config: ExperimentConfig, taskset: toytasks.ToyTaskSet | None = None) -> RunRecord:
    """Train one network under ``config.strategy``.

    Trace rows are written at step 0 and every ``eval_every`` updates.  Row
    ``s`` describes the model after ``s`` updates: its test losses, the loss
    weights in force (post-renormalization), and the balancing quantities on
    that step's training batch.  ``L_i(0)`` for loss ratios is the first
    training batch's loss.
    """
    config.validate()
    taskset = taskset or build_taskset(config)
    T = taskset.num_tasks
    model = build_model(config)
    params = model.parameters()
    net_opt = AdamState.for_params(params, lr=config.optimizer.network_lr)
    strategy = make_strategy(config)
    alpha = config.strategy.alpha if config.strategy.alpha is not None else 0.0

    data_rng = Rng(linalg.derive_seed(config.data_seed, "train"))
    test_batch = toytasks.sample_batch(taskset, Rng(linalg.derive_seed(config.test_seed, "test")),
                                       config.test_batch_size)
    record = RunRecord(config, taskset.sigmas)
    initial = None
    started = time.perf_counter()
    try:
        for step in range(config.steps + 1):
            batch = toytasks.sample_batch(taskset, data_rng, config.batch_size)
            preds, cache = network.forward(model, batch.inputs)
            losses = np.array([network.squared_loss(p, t) for p, t in zip(preds, batch.targets)])
            if not np.all(np.isfinite(losses)):
                raise Divergence(f"non-finite training loss at step {step}: {losses.tolist()}")
            if initial is None:
                initial = balancer.capture_initial_losses(losses)
            residuals = [network.squared_loss_grad(p, t) for p, t in zip(preds, batch.targets)]
            w = strategy.weights.copy()
            total_grad, task_grads = network.backward(model, cache, residuals, w)
            g = np.array([linalg.l2_norm(s) for s in task_grads.shared])

            if step % config.eval_every == 0:
                test = _evaluate(model, test_batch)
                if not all(math.isfinite(v) for v in test):
                    raise Divergence(f"non-finite test loss at step {step}")
                record.rows.append(_row(step, w, losses, test, initial, g, alpha, strategy))
            if step == config.steps:
                break

            strategy.observe(losses, g)
            if not np.all(np.isfinite(strategy.weights)):
                raise Divergence(f"non-finite loss weights after step {step}")
            adam_update(net_opt, params, total_grad)
            model.touch()
    except Divergence as exc:
        record.diverged = True
        record.message = str(exc)
        log.error("run aborted: %s", exc)
    record.elapsed_seconds = time.perf_counter() - started
    return record


def _row(step, w, losses, test, initial, g, alpha, strategy) -> TraceRow:
    ratios = balancer.loss_ratios(losses, initial)
    rates = balancer.relative_rates(ratios)
    norms = w * g
    gbar = float(norms.mean())
    lgrad = float("nan")
    if isinstance(strategy, balancer.GradNorm):
        lgrad = balancer.gradnorm_loss(norms, balancer.gradnorm_targets(gbar, rates, alpha))
    return TraceRow(
        step=step,
        weights=tuple(w.tolist()),
        train_loss=tuple(losses.tolist()),
        test_loss=tuple(test),
        ratios=tuple(ratios.tolist()),
        rates=tuple(rates.tolist()),
        gnorms=tuple(norms.tolist()),
        gbar=gbar,
        lgrad=lgrad,
    )


def normalized_test_losses(record: RunRecord, row: int = -1) -> np.ndarray:
    """Per-task ``L_i(t) / L_i(0)`` on the fixed test batch."""
    if not record.rows:
        raise ValueError("record has no trace rows")
    initial = np.array(record.rows[0].test_loss)
    if np.any(initial <= 0):
        raise ValueError("initial test losses must be positive")
    return np.array(record.rows[row].test_loss) / initial


def task_normalized_test_loss(record: RunRecord, row: int = -1) -> float:
    """Sum over tasks of test loss divided by its step-0 value."""
    return float(normalized_test_losses(record, row).sum())


def time_averaged_weights(record: RunRecord, start_step: int = 0) -> np.ndarray:
    rows = [r.weights for r in record.rows if r.step >= start_step]
    if not rows:
        raise ValueError("no trace rows to average")
    return np.mean(np.array(rows), axis=0)


def extract_static_weights(record: RunRecord) -> np.ndarray:
    """Time-averaged weights of a run, rescaled to sum to the number of tasks."""
    if not record.rows:
        raise ValueError("cannot extract weights from an empty trace")
    return balancer.renormalize(time_averaged_weights(record))


def _ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    rx, ry = _ranks(x), _ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom > 0 else float("nan")


def _run_many(configs, workers):
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(configs) <= 1:
        return [train_run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train_run, configs))


@dataclass
class GridRow:
    index: int
    kind: str
    weights: tuple[float, ...]
    normalized_test_loss: float
    distance: float
    delta_percent: float


@dataclass
class GridStudy:
    reference_weights: tuple[float, ...]
    reference_loss: float
    rows: list[GridRow]
    spearman: float
    steps: int


def grid_search_study(
    base_config: ExperimentConfig,
    n_runs: int,
    rng: Rng,
    budget_fraction: float = 0.25,
    workers: int | None = 1,
    extra_static: list | None = None,
) -> GridStudy:
    """Random static-weight runs compared with a GradNorm run at the same budget.

    Weights are Uniform(0, 1) per task, rescaled to sum to T.  Each row gives
    the L2 distance to the GradNorm run's time-averaged weights and the percent
    change in task-normalized test loss relative to that run (negative =
    better than GradNorm).  ``extra_static`` appends runs at given weights.
    """
    if n_runs < 2:
        raise ValueError("grid search needs at least two runs")
    if base_config.strategy.name != "gradnorm":
        raise ValueError("base config must use the gradnorm strategy")
    steps = max(1, int(round(base_config.steps * budget_fraction)))
    ref_cfg = copy.deepcopy(base_config)
    ref_cfg.steps = steps
    ref_cfg.eval_every = min(ref_cfg.eval_every, steps)
    ref = train_run(ref_cfg)
    if ref.diverged:
        raise RuntimeError(f"GradNorm reference run diverged: {ref.message}")
    ref_w = time_averaged_weights(ref)
    ref_loss = task_normalized_test_loss(ref)
    T = base_config.taskset.num_tasks

    weight_sets = [balancer.renormalize(rng.uniform(T)) for _ in range(n_runs)]
    weight_sets += [balancer.static_weights(w) for w in (extra_static or [])]
    configs = [ref_cfg.with_strategy("static", weights=w) for w in weight_sets]
    records = _run_many(configs, workers)

    rows = [GridRow(0, "gradnorm", tuple(ref_w.tolist()), ref_loss, 0.0, 0.0)]
    for i, (w, rec) in enumerate(zip(weight_sets, records), start=1):
        loss = task_normalized_test_loss(rec) if not rec.diverged else float("inf")
        rows.append(GridRow(
            i, "static", tuple(float(v) for v in w), loss,
            float(np.linalg.norm(w - ref_w)), 100.0 * (loss - ref_loss) / ref_loss,
        ))
    static = rows[1:1 + n_runs]
    rho = spearman([r.distance for r in static], [r.normalized_test_loss for r in static])
    return GridStudy(tuple(ref_w.tolist()), ref_loss, rows, rho, steps)


@dataclass
class SweepRow:
    label: str
    alpha: float
    percent_change: tuple[float, ...]
    mean_percent_change: float

    @property
    def gain(self) -> float:
        """Mean percent reduction in test loss ratio versus equal weights."""
        return -self.mean_percent_change


def percent_change(record: RunRecord, baseline: RunRecord) -> np.ndarray:
    """Per-task percent change of final test loss ratio relative to ``baseline``."""
    ours, theirs = normalized_test_losses(record), normalized_test_losses(baseline)
    return 100.0 * (ours - theirs) / theirs


def alpha_sweep(
    base_config: ExperimentConfig,
    alphas,
    workers: int | None = 1,
    control: bool = False,
) -> list[SweepRow]:
    """GradNorm at each alpha against an equal-weights run on identical seeds.

    With ``control`` an extra row freezes the loss weights (weight lr 0),
    which must reproduce the baseline exactly.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("need at least one alpha")
    if any(a < 0 for a in alphas):
        raise ValueError("alphas must be nonnegative")
    configs = [base_config.with_strategy("equal")]
    configs += [base_config.with_strategy("gradnorm", alpha=a) for a in alphas]
    if control:
        frozen = base_config.with_strategy("gradnorm", alpha=alphas[0])
        frozen.optimizer.weight_lr = 0.0
        configs.append(frozen)
    records = _run_many(configs, workers)
    baseline = records[0]
    if baseline.diverged:
        raise RuntimeError(f"equal-weights baseline diverged: {baseline.message}")
    labels = [f"alpha={a:g}" for a in alphas] + (["control"] if control else [])
    rows = []
    for label, cfg, rec in zip(labels, configs[1:], records[1:]):
        if rec.diverged:
            change = np.full(rec.num_tasks, float("inf"))
        else:
            change = percent_change(rec, baseline)
        rows.append(SweepRow(label, cfg.strategy.alpha, tuple(change.tolist()), float(change.mean())))
    return rows
