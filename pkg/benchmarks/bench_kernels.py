"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--sweeps 20]

Times each kernel on sampler-sized inputs under both backends, then times
whole sweeps on the 2x2 synthetic fixture with each backend (the sweep run
uses a subprocess so the backend switch takes effect at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mldp import _kernels_py

try:
    from mldp import _ckernels
except ImportError:
    _ckernels = None

SWEEP_SNIPPET = """
import time
from mldp import gibbs, testkit
from mldp.components import BasePrior
from mldp.kernels import BACKEND
from mldp.prior import Hyperparams
ds = testkit.to_dataset(testkit.generate_synthetic(testkit.grid2x2()), [2, 2], [2, 2])
prior = BasePrior.from_data(ds.flatten().X)
sc = gibbs.SamplerConfig(iterations={n}, burn_in=0, thin=1)
t = time.perf_counter()
gibbs.run(ds, ds.cfg, sc, Hyperparams(), prior)
print(BACKEND, (time.perf_counter() - t) / {n})
"""


def kernel_inputs(rng, P=2, K=12, n=160, n_atoms=12):
    A = rng.standard_normal((K, P, P))
    T = np.tril(A) + 3 * np.eye(P)
    return {
        "covariate_loglik": (rng.standard_normal((n, P)), rng.standard_normal((K, P)), T, rng.standard_normal(K)),
        "joint_loglik": (rng.standard_normal(P), 0.3, rng.standard_normal((K, P)), T, rng.standard_normal(K),
                         rng.standard_normal((K, P)), rng.gamma(2.0, size=K)),
        "draw_log_categorical": (rng.standard_normal(K + 12), 0.37),
        "assemble_atoms": (rng.chisquare(4.0, (n_atoms, P)), rng.standard_normal((n_atoms, P * (P - 1) // 2)),
                           rng.standard_normal((n_atoms, P)), rng.standard_normal((n_atoms, P)),
                           np.eye(P), np.eye(P), np.zeros(P), np.zeros(P), 1.0, rng.gamma(2.0, size=n_atoms)),
    }


def bench_kernels(number=2000):
    rng = np.random.default_rng(0)
    inputs = kernel_inputs(rng)
    print(f"{'kernel':<22} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for name, args in inputs.items():
        tp = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*args), number=number, repeat=3)) / number
        if _ckernels is None:
            print(f"{name:<22} {tp * 1e6:>10.2f} {'n/a':>10}")
            continue
        tc = min(timeit.repeat(lambda: getattr(_ckernels, name)(*args), number=number, repeat=3)) / number
        print(f"{name:<22} {tp * 1e6:>10.2f} {tc * 1e6:>10.2f} {tp / tc:>8.1f}")


def bench_sweeps(n):
    print(f"\nseconds per sweep, 2x2 fixture (160 samples), {n} sweeps")
    for pure in ("1", "0"):
        env = dict(os.environ, MLDP_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SWEEP_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"{out[0]:<8} {float(out[1]):.4f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweeps", type=int, default=20)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args()
    bench_kernels(args.number)
    bench_sweeps(args.sweeps)


if __name__ == "__main__":
    main()
