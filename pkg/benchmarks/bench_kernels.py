"""Compare the compiled and pure-numpy filter-bank kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times one analysis + synthesis pass per backend over several batch and
signal sizes, plus a full 2-D multi-level transform, and checks that both
backends agree to rounding.
"""

import argparse
import timeit

import numpy as np

from zapslab import _kernels_py
from zapslab.wavelet import WaveletBasis

try:
    from zapslab import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def bench_pair(mod, x, lo, hi, repeat):
    def go():
        a, d = mod.analysis_periodic(x, lo, hi)
        mod.synthesis_periodic(a, d, lo, hi)

    go()
    return min(timeit.repeat(go, number=5, repeat=repeat)) / 5


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'family':6s} {'rows':>6s} {'n':>5s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for family in ("db2", "db4", "db8"):
        basis = WaveletBasis(family, 1)
        for rows, n in ((32, 32), (256, 256), (2048, 64)):
            x = np.ascontiguousarray(rng.standard_normal((rows, n)))
            t_py = bench_pair(_kernels_py, x, basis.lo, basis.hi, args.repeat)
            if _kernels_c is None:
                print(f"{family:6s} {rows:6d} {n:5d} {1e3 * t_py:10.3f} {'-':>10s} {'-':>8s}")
                continue
            a1, d1 = _kernels_py.analysis_periodic(x, basis.lo, basis.hi)
            a2, d2 = _kernels_c.analysis_periodic(x, basis.lo, basis.hi)
            assert np.allclose(a1, a2, atol=1e-12) and np.allclose(d1, d2, atol=1e-12)
            t_c = bench_pair(_kernels_c, x, basis.lo, basis.hi, args.repeat)
            print(f"{family:6s} {rows:6d} {n:5d} {1e3 * t_py:10.3f} {1e3 * t_c:10.3f} {t_py / t_c:8.1f}")

    # whole 2-D transform through the dispatch layer, one backend at a time
    from zapslab import kernels, wavelet

    basis = WaveletBasis("db4", 2)
    for shape in ((1, 32, 32), (3, 256, 256)):
        x = rng.standard_normal(shape)
        times = {}
        for name, mod in (("numpy", _kernels_py), ("cython", _kernels_c)):
            if mod is None:
                continue
            kernels.analysis_periodic = mod.analysis_periodic
            kernels.synthesis_periodic = mod.synthesis_periodic
            times[name] = min(timeit.repeat(
                lambda: wavelet.dwt2_inverse(wavelet.dwt2_forward(x, basis), basis),
                number=3, repeat=args.repeat)) / 3
        line = "  ".join(f"{k} {1e3 * v:.3f} ms" for k, v in times.items())
        print(f"dwt2 db4 L2 round trip {shape}: {line}")


if __name__ == "__main__":
    main()
