"""Time the numba kernels against the pure-numpy reference path.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time of each backend and
checks that both return the same values.
"""
import argparse
import timeit

import numpy as np

from selfir import _kernels


def cases(rng):
    img = rng.random((3, 128, 128))
    plan = rng.integers(0, 4, size=(64, 64, 2)).astype(np.int8)
    plan[:, :, 1] = (plan[:, :, 0] + 1 + rng.integers(0, 3, size=(64, 64))) % 4
    a, b = rng.random((3, 64, 64)), rng.random((3, 64, 64))
    frames = rng.random((11, 96, 96, 3)).astype(np.float32)
    return {
        "gather_cells (3x128x128)": lambda be: _kernels.gather_cells(img, plan, 0, backend=be),
        "patch_stats (3x64x64, p=16)": lambda be: _kernels.patch_stats(a, b, 16, backend=be),
        "frame_mean (11x96x96x3)": lambda be: _kernels.frame_mean(frames, backend=be),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable (or disabled via SELFIR_DISABLE_NUMBA); numpy path only")
    rng = np.random.default_rng(0)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"{'kernel':32s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in cases(rng).items():
        outs = {be: fn(be) for be in backends}       # also triggers JIT compilation
        if len(outs) == 2:
            pairs = zip(outs["numpy"], outs["numba"]) if isinstance(outs["numpy"], tuple) else \
                [(outs["numpy"], outs["numba"])]
            for x, y in pairs:
                np.testing.assert_allclose(x, y, rtol=0, atol=1e-10)
        times = {be: min(timeit.repeat(lambda: fn(be), number=args.number, repeat=args.repeat)) / args.number
                 for be in backends}
        cols = " ".join(f"{times[b] * 1e6:10.1f}us" for b in backends)
        speed = f"{times['numpy'] / times['numba']:8.1f}x" if "numba" in times else ""
        print(f"{name:32s} {cols} {speed}")


if __name__ == "__main__":
    main()
