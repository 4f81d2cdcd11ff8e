"""Time the numba and numpy implementations of each looped kernel.

Usage::

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call is excluded from timing (compilation, or a cache load).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cnsf import kernels as K


def _best(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    frames = rng.standard_normal((4, 250, 512))
    gx = rng.standard_normal((8, 63, 4 * 64))
    wh = 0.1 * rng.standard_normal((64, 4 * 64))
    hs, cs, gates = K.lstm_forward_numpy(gx, wh, False)
    dhs = rng.standard_normal(hs.shape)
    mats = rng.standard_normal((257 * 8, 2, 2)) + 1j * rng.standard_normal((257 * 8, 2, 2))
    ism = ([1.0, 1.2, 1.1], [2.5, 2.0, 1.3], [6.0, 5.0, 3.0], np.full((2, 3), 0.85), 12, 16000, 343.0, 7200, 16)
    return {
        "overlap_add": (frames, 256, 249 * 256 + 512),
        "lstm_forward": (gx, wh, False),
        "lstm_backward": (dhs, hs, cs, gates, wh, False),
        "complex_inverse": (mats,),
        "ism_rir": ism,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy path exists")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, a in cases(rng).items():
        t_np = _best(getattr(K, f"{name}_numpy"), a, args.repeat)
        if K.HAVE_NUMBA:
            t_nb = _best(getattr(K, f"{name}_numba"), a, args.repeat)
            print(f"{name:<16}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<16}{1e3 * t_np:>12.2f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
