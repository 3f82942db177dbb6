"""Time the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--size S]

Each kernel runs once untimed (to absorb JIT compilation), then the best of
``--repeat`` runs is reported for both backends along with the max absolute
difference between their outputs.
"""
import argparse
import math
import timeit

import numpy as np

from signfusion.kernels import HAVE_NUMBA, numba_impl, numpy_impl


def cases(size, rng):
    x = rng.random((8, size, size, 8))
    w = rng.normal(size=(3, 3, 8, 16))
    b = rng.normal(size=16)
    dout = rng.normal(size=(8, size, size, 16))
    pool_in = rng.random((8, size, size, 16))
    pool_out, pool_idx = numpy_impl.maxpool2_forward(pool_in)
    img = rng.random((size, size, 3))
    grad = rng.normal(size=73 * 362 * 16)
    return {
        "conv2d_forward": lambda m: m.conv2d_forward(x, w, b),
        "conv2d_backward": lambda m: m.conv2d_backward(x, w, dout),
        "maxpool2_forward": lambda m: m.maxpool2_forward(pool_in)[0],
        "maxpool2_backward": lambda m: m.maxpool2_backward(pool_out, pool_idx, size, size),
        "bilinear_resize": lambda m: m.bilinear_resize(img, 224, 224),
        "rotate_zoom": lambda m: m.rotate_zoom(img, math.radians(12.0), 1.07),
        "rmsprop_update": lambda m: _rmsprop(m, grad),
    }


def _rmsprop(m, grad):
    p = np.ones_like(grad)
    acc = np.zeros_like(grad)
    m.rmsprop_update(p, grad, acc, 1e-3, 0.9, 1e-7)
    return p


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=32, help="spatial size of the conv/pool inputs")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases(args.size, rng).items():
        ref = fn(numpy_impl)
        got = fn(numba_impl)
        diff = float(np.max(np.abs(_flat(ref) - _flat(got))))
        t_np = min(timeit.repeat(lambda: fn(numpy_impl), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(numba_impl), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
