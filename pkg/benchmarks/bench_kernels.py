"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from magkit import _fallback
from magkit.kmap import PermutationOrbit, SourceSet

try:
    from magkit import _core
except ImportError:  # pragma: no cover
    _core = None


def cases():
    for k, d in [(2, 2), (4, 2), (6, 2), (7, 3)]:
        orbit = PermutationOrbit(SourceSet.random(k, d, seed=1, spread=1.0))
        y = np.random.default_rng(2).standard_normal(orbit.dim)
        yield f"mixture_moments k={k} d={d} ({orbit.size} images)", lambda m, y=y, o=orbit: m.mixture_moments(
            y, o.images, 0.3, True)
    for n, D in [(1000, 2), (5000, 6)]:
        rng = np.random.default_rng(3)
        normals = rng.standard_normal((20, n, D))
        scales = np.full(20, 0.05)
        start = rng.standard_normal((n, D)) * 0.3

        def walk(m, start=start, normals=normals, scales=scales, n=n):
            pts = start.copy()
            m.stopped_walk(pts, np.zeros(n, dtype=np.uint8), normals, scales, 1.0)

        yield f"stopped_walk n={n} D={D} (20 substeps)", walk


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    mods = [("numpy", _fallback)] + ([("cython", _core)] if _core is not None else [])
    print(f"{'case':<44}" + "".join(f"{name:>14}" for name, _ in mods) + ("   speedup" if len(mods) == 2 else ""))
    for label, fn in cases():
        times = []
        for _, mod in mods:
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, number)) / number)
        row = f"{label:<44}" + "".join(f"{t * 1e6:>11.1f} us" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
