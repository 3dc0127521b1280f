"""Compare the compiled and numpy kernels.

    python bench/benchmark.py [--sizes 4,16,50,200] [--width 16] [--repeat 2000] [--epochs 3]

Prints microseconds per call for each kernel and bag size, then the wall
time of a short training run under each backend (run in a subprocess,
since the backend is fixed at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from croco import _pykernel
from croco._backend import compiled_available

TANH = _pykernel.TANH

TRAIN_SNIPPET = """
import time
from croco._backend import BACKEND
from croco.crocotrain import TrainConfig, fit, init_model
from croco.mildata import GenConfig, generate
ds = generate(GenConfig(d=16, bag_size={bag}, positive_count=max(1, {bag} // 10), num_pos_bags=60, num_neg_bags=60,
                        noise_sigma=0.5, seed=0))
cfg = TrainConfig(lr=0.02, epochs={epochs}, attention_weight=0.003)
state = init_model(cfg, ds.d)
t = time.perf_counter()
fit(state, ds, cfg, track_metrics=False)
print(BACKEND, time.perf_counter() - t)
"""


def kernel_cases(n: int, h: int, rng: np.random.Generator):
    x = rng.normal(size=(n, h))
    W = rng.normal(size=(h, h)) / np.sqrt(h)
    b = rng.normal(size=h)
    V = rng.normal(size=(h, h)) / np.sqrt(h)
    w = rng.normal(size=h)
    out = np.tanh(x @ W + b)
    gout = rng.normal(size=(n, h))
    u, a = _pykernel.attention_forward(x, V, w)
    ga = rng.normal(size=n)
    return {
        "dense_forward": lambda k: k.dense_forward(x, W, b, TANH),
        "dense_backward": lambda k: k.dense_backward(x, W, out, TANH, gout),
        "attention_forward": lambda k: k.attention_forward(x, V, w),
        "attention_backward": lambda k: k.attention_backward(x, V, w, u, a, ga),
    }


def time_call(fn, repeat: int) -> float:
    best = min(timeit.repeat(fn, number=repeat, repeat=3))
    return best / repeat * 1e6


def run_training(bag: int, epochs: int, pure: bool) -> str:
    env = dict(os.environ)
    env["CROCO_PURE_PYTHON"] = "1" if pure else "0"
    code = TRAIN_SNIPPET.replace("{bag}", str(bag)).replace("{epochs}", str(epochs))
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, secs = res.stdout.split()
    return f"{name:<7} {float(secs):8.3f} s"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="4,16,50,200", help="bag sizes (instances per bag)")
    ap.add_argument("--width", type=int, default=16, help="embedding and attention width")
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=3, help="epochs for the end-to-end run (0 skips it)")
    args = ap.parse_args(argv)

    if not compiled_available():
        print("compiled kernel not built; only the numpy kernel is available", file=sys.stderr)
        return 1
    from croco import _ckernel

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'n':>5} {'numpy us':>10} {'cython us':>10} {'speed-up':>9}")
    for n in sizes:
        for name, fn in kernel_cases(n, args.width, rng).items():
            t_py = time_call(lambda: fn(_pykernel), args.repeat)
            t_c = time_call(lambda: fn(_ckernel), args.repeat)
            print(f"{name:<20} {n:>5} {t_py:>10.2f} {t_c:>10.2f} {t_py / t_c:>8.2f}x")
    if args.epochs > 0:
        print(f"\ntraining, {args.epochs} epochs, 120 bags")
        for n in sizes:
            for pure in (True, False):
                print(f"bag size {n:>4}: {run_training(n, args.epochs, pure)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
