"""Compare the numba and pure-numpy kernel paths.

Part 1 times every kernel pair directly. Part 2 runs a short TV reconstruction
twice in subprocesses, once with ``INVOP_DISABLE_NUMBA=1``, and checks that
both paths produce the same estimate.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 20]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from invop.kernels import NUMBA_KERNELS
from invop._accel import NUMBA_AVAILABLE


def inputs(name, n, rng):
    if name.startswith("diff"):
        return (rng.standard_normal((n, n, 3)),)
    if name == "hyperbolic":
        return (rng.standard_normal((n * n, 2)), 1e-7)
    return (rng.standard_normal((n * n, 3)), 0.3)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


_E2E = """
import sys, time, numpy as np
from invop.deconv import PsfSpec, ReconSpec, SimulationSpec, make_psfs, reconstruct, simulate, synthetic_phantom
from invop.solvers import SolverConfig
from invop._accel import USE_NUMBA
gt = synthetic_phantom((64, 64, 3), 0)
otf, _ = make_psfs(PsfSpec(grid_shape=(96, 96)))
data, _ = simulate(gt, otf, SimulationSpec((96, 96, 3), (56, 56, 3), 10.0, 0))
spec = ReconSpec(sys.argv[1], 1e-2, solver=SolverConfig(algorithm=sys.argv[2], maxiter=100, log_every=0))
reconstruct(spec, data, otf)
t0 = time.perf_counter()
x, _ = reconstruct(spec, data, otf)
np.save(sys.argv[3], x)
print(USE_NUMBA, time.perf_counter() - t0)
"""


def end_to_end(reg, alg, tmp):
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        path = os.path.join(tmp, f"{label}.npy")
        env = dict(os.environ, INVOP_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _E2E, reg, alg, path], env=env, check=True, capture_output=True, text=True)
        used, secs = res.stdout.split()
        out[label] = (used == "True", float(secs), np.load(path))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--size", type=int, default=256, help="image side length")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--skip-e2e", action="store_true")
    args = p.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return 0
    rng = np.random.default_rng(0)
    print(f"kernels on {args.size}x{args.size} (best of {args.repeat})")
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, (fast, slow) in NUMBA_KERNELS.items():
        a = inputs(name, args.size, rng)
        r_fast, r_slow = fast(*a), slow(*a)  # also compiles / loads the cache
        if isinstance(r_fast, tuple):
            diff = float(np.max(np.abs(r_fast[1] - r_slow[1])))
        else:
            diff = float(np.max(np.abs(r_fast - r_slow)))
        tf, ts = best_of(fast, a, args.repeat), best_of(slow, a, args.repeat)
        print(f"{name:<22}{tf * 1e3:>10.3f}{ts * 1e3:>10.3f}{ts / tf:>9.2f}{diff:>11.1e}")
    if args.skip_e2e:
        return 0
    import tempfile

    print("\nend to end, 64x64x3 deconvolution, 100 iterations")
    with tempfile.TemporaryDirectory() as tmp:
        for reg, alg in (("TV", "admm"), ("HS", "admm"), ("STV", "fbs")):
            res = end_to_end(reg, alg, tmp)
            (uf, tf, xf), (us, ts, xs) = res["numba"], res["numpy"]
            diff = float(np.max(np.abs(xf - xs)))
            print(f"{reg}/{alg:<6} numba {tf:6.2f}s  numpy {ts:6.2f}s  speedup {ts / tf:5.2f}  max diff {diff:.1e}"
                  f"{'' if uf and not us else '  (flag not honored!)'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
