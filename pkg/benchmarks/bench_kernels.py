"""Compare the numba and numpy convolution kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

The kernel table times im2col and col2im in-process with both backends. With
``--end-to-end`` it also times one training step of the desk-scale net in two
subprocesses, one of them with MFCE_DISABLE_NUMBA=1.
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from mfce import _kernels

CASES = [
    # (batch, channels, time, freq, kt, kf, dilation)
    (16, 3, 61, 16, 5, 5, 1),
    (16, 8, 57, 16, 3, 3, 1),
    (16, 16, 33, 8, 3, 3, 2),
    (16, 32, 17, 4, 3, 3, 4),
]

STEP_SNIPPET = """
import time, numpy as np
from mfce import _kernels, convgeom, corpus, model, trainer
spec = convgeom.deep_spec(48, 16, (8, 16, 16, 32), 64, freq_pool_after=(0, 1))
net = model.build(spec, 0)
rng = np.random.default_rng(0)
x = rng.normal(size=(16, 3, 61, 16))
y = rng.integers(0, 48, size=(16, 9))
b = corpus.Batch(x, y, [0] * 16, [0] * 16)
cfg = trainer.TrainConfig(lr0=1e-4)
v = trainer.velocity_like(net)
trainer.train_step(net, b, v, cfg, 1e-4)
times = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    trainer.train_step(net, b, v, cfg, 1e-4)
    times.append(time.perf_counter() - t0)
times.sort()
print(_kernels.backend(), times[len(times) // 2])
"""


def timeit(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_table(repeat):
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy path can be timed")
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'im2col np':>12}{'im2col nb':>12}{'col2im np':>12}{'col2im nb':>12}")
    for b, c, t, f, kt, kf, d in CASES:
        pad = kf // 2
        x = rng.normal(size=(b, c, t, f + 2 * pad))
        t_out, f_out = t - (kt - 1) * d, f
        args = (kt, kf, d, 1, t_out, f_out)
        cols = _kernels.im2col(x, *args, use_numba=False).copy()
        row = []
        for numba in (False, True):
            if numba and not _kernels.HAVE_NUMBA:
                row += [float("nan")] * 2
                continue
            row.append(timeit(lambda: _kernels.im2col(x, *args, use_numba=numba), repeat))
            row.append(timeit(lambda: _kernels.col2im(cols, x.shape, *args, use_numba=numba),
                              repeat))
        im_np, col_np, im_nb, col_nb = row
        label = f"{b}x{c}x{t}x{f} k{kt}x{kf} d{d}"
        print(f"{label:<28}{im_np * 1e3:>10.2f}ms{im_nb * 1e3:>10.2f}ms"
              f"{col_np * 1e3:>10.2f}ms{col_nb * 1e3:>10.2f}ms")


def end_to_end(repeat):
    code = STEP_SNIPPET.format(repeat=repeat)
    for disable in ("0", "1"):
        env = dict(os.environ, MFCE_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"train step, {out[0]:<6} backend: {float(out[1]) * 1e3:8.1f} ms")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args()
    kernel_table(args.repeat)
    if args.end_to_end:
        end_to_end(max(3, args.repeat // 4))


if __name__ == "__main__":
    main()
