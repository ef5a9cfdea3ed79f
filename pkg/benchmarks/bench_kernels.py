"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-N wall time per call for both backends, the
speedup, and the largest absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from ctxnet import geometry, kernels


def cases(rng):
    imgs = rng.random((256, 28, 28)).astype(np.float32)
    inv = np.stack([geometry.inverse_map(p) for p in geometry.sample_params(rng, 256)])
    grid = rng.standard_normal((64, 405, 32)).astype(np.float32)
    w = rng.standard_normal((64, 32)).astype(np.float32)
    b = rng.standard_normal(64).astype(np.float32)
    fmap = rng.standard_normal((64, 64, 24, 24)).astype(np.float32)
    _, pos = kernels.maxpool2x2(fmap, "python")
    g = rng.standard_normal((64, 64, 12, 12)).astype(np.float32)
    return [
        ("warp_bilinear 256x28x28", lambda be: kernels.warp_bilinear(imgs, inv, be)),
        ("shared_dense_max 64x405x32->64", lambda be: kernels.shared_dense_max(grid, w, b, be)),
        ("maxpool2x2 64x64x24x24", lambda be: kernels.maxpool2x2(fmap, be)),
        ("maxpool2x2_backward", lambda be: kernels.maxpool2x2_backward(g, pos, be)),
    ]


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "cython" not in kernels.available_backends():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng):
        t = {}
        for be in ("cython", "python"):
            fn(be)  # warm up
            t[be] = min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat)) * 1e3
        diff = max_diff(fn("cython"), fn("python"))
        print(f"{name:34s} {t['cython']:10.2f} {t['python']:10.2f} {t['python'] / t['cython']:7.1f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
