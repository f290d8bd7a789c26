"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times the hot kernels on toy-experiment shapes, then one full training step
per backend and strategy (equal weights vs GradNorm) to show the balancing
overhead.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gradnorm._backend import load


def best_us(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e6


def kernel_rows(k, repeat):
    r = np.random.default_rng(0)
    x = r.normal(size=(100, 250))
    w0 = r.normal(size=(250, 100))
    h = r.normal(size=(100, 100))
    g = r.normal(size=(100, 100))
    p, m, v = r.normal(size=(100, 100)), np.zeros((100, 100)), np.zeros((100, 100))
    return [
        ("matmul 100x250 @ 250x100", best_us(lambda: k.matmul(x, w0), repeat, 200)),
        ("matmul 100x100 @ 100x100", best_us(lambda: k.matmul(h, h), repeat, 200)),
        ("matmul_tn (weight grad)", best_us(lambda: k.matmul_tn(h, g), repeat, 200)),
        ("matmul_nt (input grad)", best_us(lambda: k.matmul_nt(g, h), repeat, 200)),
        ("gaussian x 25000", best_us(lambda: k.gaussian(1, 0, 25000), repeat, 50)),
        ("relu_backward 100x100", best_us(lambda: k.relu_backward(g, h), repeat, 500)),
        ("adam_step 100x100", best_us(lambda: k.adam_step(p, g, m, v, 1e-3, 0.9, 0.999, 0.5, 0.5, 1e-8),
                                      repeat, 500)),
    ]


STEP_SNIPPET = """
import sys
from gradnorm import config, harness
strategy, steps = sys.argv[1], int(sys.argv[2])
cfg = config.preset("toy2").with_strategy(strategy, alpha=0.12 if strategy == "gradnorm" else None)
cfg.steps, cfg.eval_every, cfg.test_batch_size = steps, steps, 1
print(harness.train_run(cfg).elapsed_seconds / steps * 1e3)
"""


def step_ms(backend, strategy, steps=300):
    """Mean wall time per training step on the toy2 shapes, in a fresh interpreter per backend."""
    env = {**os.environ, "GRADNORM_BACKEND": backend}
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET, strategy, str(steps)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": load("python")}
    try:
        backends["compiled"] = load("compiled")
    except ImportError:
        print("compiled core not built; timing the fallback only")

    rows = {name: kernel_rows(k, args.repeat) for name, k in backends.items()}
    names = list(backends)
    print(f"{'kernel (us/call)':<28}" + "".join(f"{n:>12}" for n in names))
    for i, (label, _) in enumerate(rows[names[0]]):
        print(f"{label:<28}" + "".join(f"{rows[n][i][1]:>12.1f}" for n in names))

    print()
    print(f"{'train step (ms), toy2':<28}" + "".join(f"{n:>12}" for n in names))
    for strategy in ("equal", "gradnorm"):
        print(f"{strategy:<28}" + "".join(f"{step_ms(n, strategy):>12.2f}" for n in names))


if __name__ == "__main__":
    main()
