"""Compiled vs pure-Python GRU kernels, and one full converter training step.

    python benchmarks/bench_kernels.py [--repeat N]

Each backend is selected with ``pseudovc.numcore.kernels.use``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pseudovc import numcore as nc
from pseudovc.numcore import kernels
from pseudovc.numcore.tensor import Tensor
from pseudovc.vc import TrainingConfig, VoiceConverter


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_scan(impl, B, T, H, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, T, 3 * H)).astype(np.float32)
    w = (rng.standard_normal((H, 3 * H)) / np.sqrt(H)).astype(np.float32)
    b = np.zeros(3 * H, np.float32)
    hs, cache = impl.gru_forward(x, w, b, False)
    d = rng.standard_normal(hs.shape).astype(np.float32)
    fwd = best_of(lambda: impl.gru_forward(x, w, b, False), repeat)
    bwd = best_of(lambda: impl.gru_backward(d, hs, cache, w, False), repeat)
    return fwd, bwd


def bench_train_step(repeat):
    rng = np.random.default_rng(0)
    model = VoiceConverter.init(seed=0)
    cfg = TrainingConfig.stage1(steps=1)
    x1 = rng.uniform(0, 1, (16, 128, 80)).astype(np.float32)
    s1 = rng.standard_normal((16, 256)).astype(np.float32)
    s1 /= np.linalg.norm(s1, axis=1, keepdims=True)

    def step():
        nc.forward_backward(lambda t: model.loss_stage1(t, Tensor(x1), Tensor(s1), cfg)["total"], model.params)

    return best_of(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.compiled_available():
        print("compiled kernel not built; only the fallback can be timed")
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'shape (B,T,H)':>16} {'impl':>9} {'fwd ms':>9} {'bwd ms':>9}")
    names = (["compiled"] if kernels.compiled_available() else []) + ["python"]
    impls = [(n, kernels.implementation(n)) for n in names]
    for shape in [(16, 128, 32), (16, 128, 64), (8, 153, 64)]:
        for name, impl in impls:
            f, b = bench_scan(impl, *shape, args.repeat)
            print(f"{str(shape):>16} {name:>9} {f * 1e3:9.2f} {b * 1e3:9.2f}")
    print("\nfull stage-1 training step (batch 16 x 128 frames, forward + backward)")
    active = kernels.BACKEND
    for name in names:
        kernels.use(name)
        try:
            print(f"{name:>9}: {bench_train_step(max(1, args.repeat // 2)) * 1e3:8.1f} ms")
        finally:
            kernels.use(active)


if __name__ == "__main__":
    main()
