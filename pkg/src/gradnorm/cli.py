"""Command-line entry point: ``gradnorm train|gridsearch|sweep-alpha|plot|selftest``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from gradnorm import config as cfgmod
from gradnorm import harness, svg
from gradnorm.config import ConfigError, ExperimentConfig
from gradnorm.linalg import Rng, derive_seed

OUT_ENV = "GRADNORM_OUT"
PLOT_KINDS = ("weights", "losses", "normalized")


def fmt(x: float) -> str:
    return f"{float(x):.9g}"


def trace_header(T: int) -> list[str]:
    cols = ["step"]
    for prefix in ("w", "train_loss", "test_loss", "ratio", "rate", "gnorm"):
        cols += [f"{prefix}_{i}" for i in range(1, T + 1)]
    return cols + ["gbar", "lgrad"]


def write_trace(record: harness.RunRecord, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(record.num_tasks))
        for r in record.rows:
            w.writerow([r.step, *map(fmt, (*r.weights, *r.train_loss, *r.test_loss, *r.ratios,
                                            *r.rates, *r.gnorms, r.gbar, r.lgrad))])


def read_trace(path: Path) -> tuple[int, list[dict[str, float]]]:
    """Parse a trace CSV into ``(num_tasks, rows)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "step":
            raise ValueError(f"{path}: not a trace file (missing header)")
        T = sum(1 for c in header if c.startswith("w_"))
        if T == 0 or header != trace_header(T):
            raise ValueError(f"{path}: unexpected trace columns")
        rows = []
        for n, line in enumerate(reader, start=2):
            if len(line) != len(header):
                raise ValueError(f"{path}:{n}: expected {len(header)} fields, got {len(line)}")
            rows.append({k: float(v) for k, v in zip(header, line)})
    return T, rows


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{flag}: empty list")
    return vals


def build_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = cfgmod.load(args.config)
    else:
        cfg = cfgmod.preset(args.preset or "toy2")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.steps is not None:
        cfg.steps = args.steps
    strategy = getattr(args, "strategy", None)
    alpha = getattr(args, "alpha", None)
    weights = getattr(args, "weights", None)
    if strategy or alpha is not None or weights is not None:
        name = strategy or cfg.strategy.name
        if name == "gradnorm" and alpha is None:
            alpha = cfg.strategy.alpha if cfg.strategy.name == "gradnorm" else 0.12
        w = _floats(weights, "--weights") if weights is not None else None
        if name == "static" and w is None:
            w = cfg.strategy.weights
        cfg = cfg.with_strategy(name, alpha=alpha if name == "gradnorm" else None, weights=w)
    return cfg.validate()


def echo(cfg: ExperimentConfig) -> dict:
    return {"format": cfgmod.FORMAT_VERSION, **harness.resolve(cfg).to_dict()}


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args)
    resolved = echo(cfg)
    _dump_json(resolved, out / "config.json")
    record = harness.train_run(cfg)
    write_trace(record, out / "trace.csv")
    summary = {"format": cfgmod.FORMAT_VERSION, **record.summary(),
               "trace": "trace.csv", "config": "config.json"}
    _dump_json(summary, out / "summary.json")
    if record.diverged:
        print(f"diverged: {record.message}", file=sys.stderr)
        return 1
    print(f"{cfg.strategy.name}: task-normalized test loss "
          f"{summary['task_normalized_test_loss']:.6g} after {cfg.steps} steps -> {out}")
    return 0


def cmd_gridsearch(args) -> int:
    if args.runs < 2:
        raise ConfigError("--runs: must be >= 2")
    cfg = build_config(args)
    if cfg.strategy.name != "gradnorm":
        raise ConfigError("strategy.name: gridsearch needs a gradnorm reference")
    seed = args.seed if args.seed is not None else cfg.data_seed
    out = _out_dir(args)
    study = harness.grid_search_study(cfg, args.runs, Rng(derive_seed(seed, "gridsearch")),
                                      workers=args.workers)
    T = cfg.taskset.num_tasks
    with open(out / "gridsearch.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "kind", *[f"w_{i}" for i in range(1, T + 1)],
                    "normalized_test_loss", "distance", "delta_percent"])
        for r in study.rows:
            w.writerow([r.index, r.kind, *map(fmt, r.weights), fmt(r.normalized_test_loss),
                        fmt(r.distance), fmt(r.delta_percent)])
    best = min(r.delta_percent for r in study.rows[1:])
    _dump_json({
        "format": cfgmod.FORMAT_VERSION,
        "config": echo(cfg),
        "runs": args.runs,
        "steps": study.steps,
        "reference_weights": list(study.reference_weights),
        "reference_loss": study.reference_loss,
        "spearman": study.spearman,
        "best_delta_percent": best,
    }, out / "gridsearch_summary.json")
    print(f"spearman(distance, loss) = {study.spearman:.4f}; best static run {best:+.2f}% vs reference")
    return 0


def cmd_sweep_alpha(args) -> int:
    alphas = _floats(args.alphas, "--alphas")
    if any(a < 0 for a in alphas):
        raise ConfigError("--alphas: values must be >= 0")
    cfg = build_config(args)
    out = _out_dir(args)
    rows = harness.alpha_sweep(cfg, alphas, workers=args.workers, control=args.control)
    T = cfg.taskset.num_tasks
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "alpha", *[f"change_{i}" for i in range(1, T + 1)], "mean_change", "gain"])
        for r in rows:
            w.writerow([r.label, fmt(r.alpha), *map(fmt, r.percent_change),
                        fmt(r.mean_percent_change), fmt(r.gain)])
    _dump_json({"format": cfgmod.FORMAT_VERSION, "config": echo(cfg)}, out / "sweep_config.json")
    for r in rows:
        print(f"{r.label:>12}  mean change {r.mean_percent_change:+.2f}%")
    return 0


def _sigmas_near(trace: Path, T: int) -> list[float] | None:
    cfg_path = trace.parent / "config.json"
    if not cfg_path.exists():
        return None
    try:
        sig = json.loads(cfg_path.read_text())["taskset"]["sigmas"]
    except (KeyError, TypeError, json.JSONDecodeError):
        return None
    return sig if isinstance(sig, list) and len(sig) == T else None


def cmd_plot(args) -> int:
    if args.kind not in PLOT_KINDS:
        raise ConfigError(f"--kind: must be one of {', '.join(PLOT_KINDS)}")
    trace = Path(args.trace)
    T, rows = read_trace(trace)
    if not rows:
        raise ValueError(f"{trace}: trace has no rows to plot")
    sigmas = _sigmas_near(trace, T)
    steps = [r["step"] for r in rows]
    series = []
    for i in range(1, T + 1):
        label = f"task {i}" + (f" (sigma={sigmas[i - 1]:.4g})" if sigmas else "")
        if args.kind == "weights":
            ys = [r[f"w_{i}"] for r in rows]
        elif args.kind == "losses":
            ys = [r[f"test_loss_{i}"] for r in rows]
        else:
            first = rows[0][f"test_loss_{i}"]
            ys = [r[f"test_loss_{i}"] / first for r in rows]
        series.append((label, steps, ys))
    titles = {"weights": "loss weights", "losses": "test loss", "normalized": "test loss / initial"}
    doc = svg.line_chart(series, title=titles[args.kind], xlabel="step", ylabel=titles[args.kind],
                         logy=args.kind != "weights")
    dest = Path(args.out) if args.out else trace.with_name(f"{trace.stem}_{args.kind}.svg")
    dest.write_text(doc)
    print(dest)
    return 0


def cmd_selftest(args) -> int:
    from gradnorm import selftest
    failures = 0
    for name, ok, detail in selftest.run_all(seed=args.seed or 0):
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        failures += not ok
    return 1 if failures else 0


def _common(p, strategy=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", choices=("toy2", "toy10"))
    p.add_argument("--seed", type=int, help="sets the task, model, data and test seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    if strategy:
        p.add_argument("--strategy", choices=cfgmod.STRATEGIES)
        p.add_argument("--alpha", type=float)
        p.add_argument("--weights", help="comma-separated static weights")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradnorm", description="Adaptive multitask loss balancing experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network and write its trace")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="random static weights vs a GradNorm reference")
    _common(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("sweep-alpha", help="GradNorm at several alphas vs equal weights")
    _common(p, strategy=False)
    p.add_argument("--alphas", required=True, help="comma-separated, e.g. 0,0.12,0.5")
    p.add_argument("--control", action="store_true", help="add a frozen-weight control row")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("plot", help="render a trace CSV as SVG")
    p.add_argument("trace")
    p.add_argument("--kind", default="weights")
    p.add_argument("--out", help="SVG path (default next to the trace)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("selftest", help="gradient checks and invariants on tiny instances")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
