"""Time the compiled kernels against the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from ciil.emg.stream import FilterConfig
from ciil.kernels import available_backends


def bench_tdpsd(mod, windows, repeat):
    return min(timeit.repeat(lambda: mod.tdpsd_batch(windows, 0.1, 1e-10), number=1, repeat=repeat))


def bench_filter(mod, sos, block, repeat):
    def run():
        x = block.copy()
        zi = np.zeros((sos.shape[0], x.shape[0], 2))
        mod.sosfilt_inplace(sos, x, zi)

    return min(timeit.repeat(run, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--windows", type=int, default=1000)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    windows = rng.standard_normal((args.windows, 8, 400))
    stride_block = np.ascontiguousarray(rng.standard_normal((8, 100)))
    long_block = np.ascontiguousarray(rng.standard_normal((8, 60 * 2000)))
    sos = np.ascontiguousarray(FilterConfig().sos())

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the fallback only")
    results = {}
    for name, mod in backends.items():
        results[name] = {
            f"tdpsd_{args.windows}_windows": bench_tdpsd(mod, windows, args.repeat),
            "filter_100_samples": bench_filter(mod, sos, stride_block, args.repeat * 10),
            "filter_60s": bench_filter(mod, sos, long_block, max(3, args.repeat // 4)),
        }

    ref = backends["python"].tdpsd_batch(windows, 0.1, 1e-10)
    for name, mod in backends.items():
        err = float(np.abs(mod.tdpsd_batch(windows, 0.1, 1e-10) - ref).max())
        results[name]["tdpsd_max_abs_diff_vs_python"] = err

    cases = list(results["python"])[:3]
    print(f"{'case':<24}" + "".join(f"{n:>14}" for n in results) + ("      speedup" if "cython" in results else ""))
    for case in cases:
        row = f"{case:<24}" + "".join(f"{results[n][case] * 1e3:>12.3f}ms" for n in results)
        if "cython" in results:
            row += f"{results['python'][case] / results['cython'][case]:>12.1f}x"
        print(row)
    if "cython" in results:
        print(f"max |cython - python| on tdpsd: {results['cython']['tdpsd_max_abs_diff_vs_python']:.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
