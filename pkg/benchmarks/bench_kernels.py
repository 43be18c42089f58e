"""Compare the compiled and numpy pack/unpack kernels.

Two levels:

* micro: pack and unpack a face, an edge and a corner region of a
  16^3 mesh with 3 variables, whole-buffer and one partition at a time;
* end to end: one ``halobench`` exchange benchmark per backend, the numpy run
  forced via ``HALOBENCH_PURE_PYTHON=1`` in a subprocess.

Usage::

    python benchmarks/bench_kernels.py [--repeat 2000] [--iterations 200] [--skip-e2e]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from halobench import _kernels_py
from halobench.grid import send_region, recv_region

try:
    from halobench import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

EXTENTS = (16, 16, 16)
NUM_VARS = 3
WORKERS = 4
CASES = {"face": (1, 0, 0), "edge": (1, 1, 0), "corner": (1, 1, 1)}


def _setup(offset):
    values = np.random.default_rng(0).random((NUM_VARS,) + tuple(n + 2 for n in EXTENTS))
    send, recv = send_region(EXTENTS, 1, offset), recv_region(EXTENTS, 1, offset)
    n = send.ncells * NUM_VARS
    ps = -(-n // WORKERS)
    return values, send, recv, n, ps


def micro(repeat):
    backends = {"python": _kernels_py}
    if _kernels_c is not None:
        backends["cython"] = _kernels_c
    print(f"{'region':8s} {'op':14s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, offset in CASES.items():
        values, send, recv, n, ps = _setup(offset)
        buf = np.zeros(ps * WORKERS)
        lo_s, sh_s = send.box3
        lo_r, sh_r = recv.box3
        ops = {
            "pack": lambda k: k.pack_range(values, lo_s, sh_s, buf, 0, buf.shape[0]),
            "pack_slices": lambda k: [k.pack_range(values, lo_s, sh_s, buf, w * ps, (w + 1) * ps)
                                      for w in range(WORKERS)],
            "unpack": lambda k: k.unpack_range(values, lo_r, sh_r, buf, 0, n),
        }
        for op, fn in ops.items():
            times = {b: min(timeit.repeat(lambda: fn(k), number=repeat, repeat=3)) / repeat
                     for b, k in backends.items()}
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:8s} {op:14s} " + " ".join(f"{t * 1e6:10.2f}us" for t in times.values())
                  + f"   {speed:6.1f}x")


def end_to_end(iterations):
    base = [sys.executable, "-m", "halobench.cli", "--ranks", "8", "--workers", str(WORKERS),
            "--iterations", str(iterations), "--runs", "1", "--skip-verify"]
    for label, env_extra in (("compiled", {}), ("numpy", {"HALOBENCH_PURE_PYTHON": "1"})):
        env = dict(os.environ, **env_extra)
        out = subprocess.run(base, env=env, capture_output=True, text=True, check=True).stdout
        print(f"--- {label}")
        print(out.rstrip())


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=2000)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--skip-e2e", action="store_true")
    args = p.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; showing the numpy backend only")
    micro(args.repeat)
    if not args.skip_e2e:
        end_to_end(args.iterations)


if __name__ == "__main__":
    main()
