"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 200]

Each kernel is called once before timing so numba compilation is excluded.
Also runs one short Kameleon chain under each backend (subprocess, since
the backend is fixed at import time).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy.spatial import cKDTree

from graspmc import _kernels


def kernel_cases(rng):
    pts = rng.normal(size=(2000, 3)) * 0.05
    pairs = cKDTree(pts).query_pairs(0.01, output_type="ndarray").astype(np.int64)
    rims = rng.normal(size=(200, 3))
    z = rng.normal(size=(200, 7))
    y = rng.normal(size=7)
    scale = np.ones(7)
    chol = np.linalg.cholesky(_kernels.NUMPY_KERNELS["kameleon_cov"](z, y, 1.0, 0.05, 0.97, 1e-4, scale))
    noise = rng.standard_normal(7)
    return {
        "neighbour_scores": ((pts, pairs), f"{len(pts)} points, {len(pairs)} pairs"),
        "nearest_index": ((rims, rng.normal(size=3)), f"{len(rims)} rim points"),
        "kameleon_cov": ((z, y, 1.0, 0.05, 0.97, 1e-4, scale), "n=200, d=7"),
        "kameleon_move": ((z, y, chol, 1.0, 0.05, 0.97, 1e-4, scale, noise), "n=200, d=7"),
    }


CHAIN_SNIPPET = """
import time
from graspmc import BACKEND
from graspmc.experiments import prepare_scene, run_kameleon
from graspmc.grasp_model import SyntheticObject
scene = prepare_scene(SyntheticObject("plate"))
run_kameleon(scene, 0, burn_in=10, n_iters=20)  # warm-up / compile
t = time.perf_counter()
run_kameleon(scene, 0, burn_in=500, n_iters=1000)
print(BACKEND, time.perf_counter() - t)
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--no-chain", action="store_true")
    args = ap.parse_args()

    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':18s} {'size':28s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for name, (inputs, size) in cases.items():
        nb, npy = _kernels.NUMBA_KERNELS[name], _kernels.NUMPY_KERNELS[name]
        a, b = nb(*inputs), npy(*inputs)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.allclose(u, v), name
        t_nb = min(timeit.repeat(lambda: nb(*inputs), number=args.repeat, repeat=3)) / args.repeat
        t_np = min(timeit.repeat(lambda: npy(*inputs), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:18s} {size:28s} {t_nb * 1e6:10.1f} {t_np * 1e6:10.1f} {t_np / t_nb:8.2f}")

    if args.no_chain:
        return
    print("\n1000-iteration Kameleon chain on the plate:")
    for flag in ("0", "1"):
        env = dict(os.environ, GRASPMC_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", CHAIN_SNIPPET], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):.2f} s")


if __name__ == "__main__":
    main()
