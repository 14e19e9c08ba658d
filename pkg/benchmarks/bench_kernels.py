"""Compare the compiled and numpy convolution backends.

Times one forward plus one backward pass of the task head's two conv layers
at the shapes used in training, and one full head training epoch with each
backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mclsearch.kernels import _conv_py

try:
    from mclsearch.kernels import _conv
except ImportError:
    _conv = None

SHAPES = [
    # (batch, in_channels, out_channels, height, width)
    (32, 3, 8, 32, 32),
    (32, 8, 16, 16, 16),
    (32, 3, 8, 16, 16),
    (8, 3, 8, 8, 8),
]

EPOCH_SCRIPT = """
import time
import numpy as np
from mclsearch.data import SyntheticSpec, make_synthetic
from mclsearch.model import init_task_head
from mclsearch.optim import OptimizerConfig
ds = make_synthetic(SyntheticSpec(3, 100, (32, 32, 3), (6, 6, 2), 0.05, seed=0))
opt = OptimizerConfig(epochs=1, lr_stages=((1, 1e-3),))
init_task_head(ds, opt)
t = time.perf_counter()
init_task_head(ds, OptimizerConfig(epochs=2, lr_stages=((1, 1e-3),)))
print((time.perf_counter() - t) / 2)
"""


def time_pair(mod, shape, repeat):
    B, C, O, H, W = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, C, H, W))
    w = rng.standard_normal((O, C, 3, 3))
    b = rng.standard_normal(O)
    g = rng.standard_normal((B, O, H, W))

    def run():
        mod.conv3x3_forward(x, w, b)
        mod.conv3x3_backward(x, w, g)

    run()
    return min(timeit.repeat(run, number=3, repeat=repeat)) / 3


def epoch_seconds(force_python):
    env = dict(os.environ)
    if force_python:
        env["MCLSEARCH_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--skip-epoch", action="store_true", help="only time the kernels")
    args = p.parse_args(argv)
    if _conv is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace` first")
        return 1
    print(f"{'shape (B,C,O,H,W)':<24}{'compiled ms':>14}{'numpy ms':>12}{'speedup':>10}")
    for shape in SHAPES:
        tc = time_pair(_conv, shape, args.repeat)
        tp = time_pair(_conv_py, shape, args.repeat)
        print(f"{str(shape):<24}{1e3 * tc:>14.2f}{1e3 * tp:>12.2f}{tp / tc:>9.1f}x")
    if not args.skip_epoch:
        ec, ep = epoch_seconds(False), epoch_seconds(True)
        print(f"{'head epoch, 180 x 32x32x3':<24}{1e3 * ec:>14.0f}{1e3 * ep:>12.0f}{ep / ec:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
