"""Time the numba and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Covers the raw kernels (im2col, col2im, importance update) and one full
conv-layer forward+backward through ``ailsr.numcore`` with each backend
swapped in.  Numba compilation happens in a warm-up call and is excluded.
Results are checked for agreement before anything is timed.
"""

import argparse
import json
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from ailsr import kernels
from ailsr.numcore import ConvParams, conv2d_backward, conv2d_forward

CASES = {
    # name: (batch, channels, h, w)
    "patch_w8": (4, 8, 32, 32),
    "patch_w32": (4, 32, 32, 32),
    "image_w64": (1, 64, 64, 64),
}


def _use(backend):
    kernels.im2col, kernels.col2im, kernels.importance_update_kernel = kernels.get_kernels(backend)


def _best(fn, repeat):
    fn()  # warm-up (JIT compile on first numba call)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(backends, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, shape in CASES.items():
        n, c, h, w = shape
        x = rng.standard_normal(shape)
        cols = rng.standard_normal((c * 9, n * h * w))
        params = ConvParams(rng.standard_normal((c, c, 3, 3)) * 0.1, np.zeros(c))
        g = rng.standard_normal(shape)
        ref = None
        for b in backends:
            im2col, col2im, _ = kernels.get_kernels(b)
            out = (im2col(x, 3, 1), col2im(cols, shape, 3, 1))
            if ref is None:
                ref = out
            else:
                assert all(np.array_equal(a, r) for a, r in zip(out, ref)), f"{b} disagrees on {name}"
            _use(b)
            rows.append({
                "case": name, "backend": b,
                "im2col_ms": 1e3 * _best(lambda: im2col(x, 3, 1), repeat),
                "col2im_ms": 1e3 * _best(lambda: col2im(cols, shape, 3, 1), repeat),
                "conv_fwd_bwd_ms": 1e3 * _best(
                    lambda: (conv2d_forward(x, params), conv2d_backward(x, params, g)), repeat),
            })
    w_prev = rng.uniform(0, 1, (640, 32, 32))
    d = rng.exponential(0.01, w_prev.shape)
    for b in backends:
        upd = kernels.get_kernels(b)[2]
        rows.append({
            "case": "importance_640x32x32", "backend": b,
            "update_ms": 1e3 * _best(lambda: upd(w_prev, d, 0.15), repeat),
        })
    _use(kernels.BACKEND)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    with threadpool_limits(limits=1):
        rows = bench(backends, args.repeat)
    keys = ["im2col_ms", "col2im_ms", "conv_fwd_bwd_ms", "update_ms"]
    print(f"{'case':<22}{'backend':<8}" + "".join(f"{k:>17}" for k in keys))
    for r in rows:
        print(f"{r['case']:<22}{r['backend']:<8}" + "".join(
            f"{r[k]:>17.3f}" if k in r else f"{'-':>17}" for k in keys))
    if len(backends) == 2:
        print()
        by = {(r["case"], r["backend"]): r for r in rows}
        for case in list(CASES) + ["importance_640x32x32"]:
            a, b = by[(case, "numpy")], by[(case, "numba")]
            ratios = ", ".join(f"{k[:-3]} x{a[k] / b[k]:.2f}" for k in keys if k in a)
            print(f"numba speed-up on {case}: {ratios}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
