"""Benchmark the compiled kernels against the numpy fallback.

Per-kernel microbenchmarks run both backends in-process; the end-to-end
training-step comparison re-launches the interpreter with MODT_KERNELS set,
because the backend is chosen at import time.

Usage: python benchmarks/bench_kernels.py [--steps 6]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from modt._kernels import numpy_backend as NB  # noqa: E402

try:
    from modt._kernels import core as CC
except ImportError:
    CC = None


def timeit(fn, *args, repeat=30):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3


def per_kernel(dtype=np.float32):
    rng = np.random.default_rng(0)
    b, h, t, e = 64, 4, 60, 128
    rows = b * t
    x2 = rng.normal(size=(rows, e)).astype(dtype)
    gain = np.ones(e, dtype=dtype)
    bias = np.zeros(e, dtype=dtype)
    scores = rng.normal(size=(b * h, t, t)).astype(dtype)
    relu_in = rng.normal(size=rows * 4 * e).astype(dtype)
    y_sm = NB.causal_softmax_fwd(scores)
    dy_sm = rng.normal(size=scores.shape).astype(dtype)
    _, mean, rstd = NB.layernorm_fwd(x2, gain, bias, 1e-5)
    dy_ln = rng.normal(size=x2.shape).astype(dtype)

    cases = [
        ("causal_softmax_fwd", (scores,)),
        ("causal_softmax_bwd", (y_sm, dy_sm)),
        ("layernorm_fwd", (x2, gain, bias, 1e-5)),
        ("layernorm_bwd", (x2, gain, mean, rstd, dy_ln)),
        ("relu_fwd", (relu_in,)),
        ("relu_bwd", (relu_in, relu_in)),
    ]
    print(f"\nper-kernel times, dtype={np.dtype(dtype).name} "
          f"(B={b}, heads={h}, T={t}, embed={e})")
    print(f"{'kernel':22s} {'numpy ms':>9s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, args in cases:
        t_np = timeit(getattr(NB, name), *args)
        if CC is None:
            print(f"{name:22s} {t_np:9.3f} {'n/a':>12s}")
            continue
        t_cc = timeit(getattr(CC, name), *args)
        print(f"{name:22s} {t_np:9.3f} {t_cc:12.3f} {t_np / t_cc:7.2f}x")


_STEP_SNIPPET = r"""
import sys, time
sys.path.insert(0, "src")
import numpy as np
import modt._kernels as K
from modt.data import generate_dataset
from modt.model import ModelConfig
from modt.train import PRESETS, TrainConfig, train
from modt.losses import LossWeights

steps = int(sys.argv[1])
ds = generate_dataset([("random", 0.5), ("expert", 0.5)], 40, 0)
mc = ModelConfig(state_dim=4, action_dim=2, variant="modt",
                 **PRESETS["desk"]["model"])
tc = TrainConfig(loss_weights=LossWeights.uniform("modt"), batch_size=64,
                 warmup_steps=steps, total_updates=steps,
                 eval_every=10**9, eval_episodes=1)
t0 = time.perf_counter()
train(ds, mc, tc)
dt = (time.perf_counter() - t0) / steps
print(f"backend={K.BACKEND}: {dt*1000:.0f} ms/update")
"""


def end_to_end(steps):
    print(f"\nfull desk-preset training step, averaged over {steps} updates:")
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, MODT_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, "-c", _STEP_SNIPPET, str(steps)],
            env=env, capture_output=True, text=True,
            cwd=os.path.join(os.path.dirname(__file__), os.pardir))
        out = proc.stdout.strip() or proc.stderr.strip().splitlines()[-1]
        print(f"  {out}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=6)
    args = ap.parse_args()
    if CC is None:
        print("compiled kernels not built; run `python setup.py build_ext "
              "--inplace` first")
    per_kernel(np.float32)
    per_kernel(np.float64)
    end_to_end(args.steps)
