"""Numba vs pure-numpy timings for the hot kernels, plus end-to-end training throughput.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 2000]

Kernel timings run both paths in one process (the compiled and the plain
function are both importable). The end-to-end figure launches a fresh
interpreter per path so that ``HIQARL_DISABLE_NUMBA`` takes effect.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hiqarl import bench, env, nncore
from hiqarl._accel import USE_NUMBA
from hiqarl.bench import randomize_maze

E2E = """
import sys, time
from hiqarl.agents import SACConfig
from hiqarl.bench import TrainConfig, train
cfg = TrainConfig(total_steps=int(sys.argv[1]), sac=SACConfig(warmup_transitions=500))
t = time.perf_counter()
train("rarl", 0, cfg)
print(time.perf_counter() - t)
"""


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases():
    rng = np.random.default_rng(0)
    spec = nncore.MLPSpec(33, (64, 64), 4)
    params = nncore.init_params(spec, rng)
    dims = np.array(spec.dims, dtype=np.int64)
    x = rng.normal(size=(256, 33))
    cache = nncore._forward_kernel(params, dims, 0, x)
    up = rng.normal(size=(256, 4))
    boxes = rng.uniform(-5, 5, size=(3, 4))
    boxes[:, 2:] += 6
    free, *_ = bench.occupancy_grid(randomize_maze(0))
    return [
        ("mlp forward 256x[33,64,64,4]", nncore._forward_nb, nncore._forward_kernel, (params, dims, 0, x)),
        ("mlp backward 256x[33,64,64,4]", nncore._backward_nb, nncore._backward_kernel,
         (params, dims, 0, cache, up)),
        ("point-box distances (3 boxes)", env.njit(env._dist_boxes_kernel), env._dist_boxes_numpy,
         (0.3, -0.2, boxes)),
        ("box overlaps (3 boxes)", env.njit(env._overlap_kernel), env._overlap_numpy, (boxes[0], boxes)),
        ("maze BFS 100x60", bench.njit(bench._bfs_kernel), bench._bfs_numpy, (free, 5, 30, 90, 30)),
    ]


def e2e(steps, disable):
    envv = dict(os.environ, HIQARL_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", E2E, str(steps)], env=envv, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("note: numba is disabled in this process, so both columns time the plain path")
    print(f"{'kernel':34s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for name, nb_fn, np_fn, a in kernel_cases():
        nb_fn(*a)  # compile outside the timing
        number = 200 if "BFS" not in name else 20
        t_nb = best(lambda: nb_fn(*a), args.repeat, number)
        t_np = best(lambda: np_fn(*a), args.repeat, number)
        print(f"{name:34s} {t_nb * 1e6:10.1f} {t_np * 1e6:10.1f} {t_np / t_nb:8.2f}")
    if args.steps:
        t_nb, t_np = e2e(args.steps, False), e2e(args.steps, True)
        print(f"\nrarl training, {args.steps} steps: numba {t_nb:.1f} s, numpy {t_np:.1f} s "
              f"({1e3 * t_nb / args.steps:.2f} vs {1e3 * t_np / args.steps:.2f} ms/step)")


if __name__ == "__main__":
    main()
