"""Compare the numba and numpy backends on the trainer's hot paths.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports the median wall time of one loss+gradient evaluation and of a
L-BFGS descent iteration (line search included) for a few problem sizes,
plus the resulting speed-up.  The first compiled call is excluded; with
numba's on-disk cache it is fast after the first ever run.
"""

import argparse
import statistics
import time

import numpy as np

from resnet_landscape.kernels import HAVE_NUMBA, LinearObjective, ResNetObjective
from resnet_landscape.model import DataSet, ParamLayout, StackConfig, init_params
from resnet_landscape.optim import armijo_descent

CASES = [
    ("m=32  d=4 depth=2 w=8", 32, 4, 2, StackConfig(2, (8, 8), "tanh")),
    ("m=64  d=8 depth=4 w=16 skip", 64, 8, 3, StackConfig(4, (16,) * 4, "relu", use_skip=True)),
    ("m=256 d=8 depth=3 w=32", 256, 8, 3, StackConfig(3, (32,) * 3, "tanh")),
]


def _per_iteration(obj, x0, steps, repeat):
    """Median seconds per accepted descent step (runs may stall before ``steps``)."""
    iters = armijo_descent(obj, x0, 0.0, steps, method="lbfgs")[3]
    return _median_time(lambda: armijo_descent(obj, x0, 0.0, steps, method="lbfgs"), repeat) / max(iters, 1)


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _bench_case(label, m, d_x, d_y, cfg, repeat, steps):
    rng = np.random.default_rng(0)
    data = DataSet(rng.standard_normal((m, d_x)), rng.standard_normal((m, d_y)))
    layout = ParamLayout(d_x, d_y, cfg)
    x0 = layout.pack(init_params(d_x, d_y, cfg, rng))
    row = [label]
    for use_jit in (True, False):
        obj = ResNetObjective(data, layout, "squared", use_jit=use_jit)
        obj.value_grad(x0)  # compile / warm up
        armijo_descent(obj, x0, 0.0, 2, method="lbfgs")
        row.append(_median_time(lambda: obj.value_grad(x0), repeat))
        row.append(_per_iteration(obj, x0, steps, max(3, repeat // 20)))
    return row


def _bench_linear(repeat, steps):
    rng = np.random.default_rng(1)
    Phi = rng.standard_normal((64, 12))
    Y = np.eye(3)[rng.integers(0, 3, 64)]
    row = ["convex oracle softmax m=64 n=12"]
    for use_jit in (True, False):
        obj = LinearObjective(Phi, Y, "softmax_cross_entropy", use_jit=use_jit)
        r0 = np.zeros(36)
        obj.value_grad(r0)
        armijo_descent(obj, r0, 0.0, 2, method="lbfgs")
        row.append(_median_time(lambda: obj.value_grad(r0), repeat))
        row.append(_per_iteration(obj, r0, steps, max(3, repeat // 20)))
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=200, help="timed repetitions per evaluation")
    p.add_argument("--steps", type=int, default=200, help="descent iterations per timed run")
    args = p.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rows = [_bench_case(*case, args.repeat, args.steps) for case in CASES]
    rows.append(_bench_linear(args.repeat, args.steps))
    header = f"{'case':34s} {'grad numba':>11s} {'grad numpy':>11s} {'x':>6s} {'step numba':>14s} {'step numpy':>14s} {'x':>6s}"
    print(header)
    print("-" * len(header))
    for label, g_nb, d_nb, g_np, d_np in rows:
        print(
            f"{label:34s} {g_nb * 1e6:9.1f}us {g_np * 1e6:9.1f}us {g_np / g_nb:5.1f}x"
            f" {d_nb * 1e6:12.1f}us {d_np * 1e6:12.1f}us {d_np / d_nb:5.1f}x"
        )
    print(f"(step: one L-BFGS iteration with Armijo backtracking, averaged over up to {args.steps})")


if __name__ == "__main__":
    main()
