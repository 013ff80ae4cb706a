"""Compare the compiled kernel backend against the pure-numpy fallback.

Times the four hot kernels (vol2col, col2vol_add, maxpool3d forward and
backward) and a full conv3d forward+backward through the autodiff layer
with each backend swapped in, checking that both produce bit-identical
results before reporting ms per call and the speedup factor.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--dtype float32]
"""

import argparse
import time

import numpy as np

from motility3d import kernels, ops, runtime
from motility3d.errors import ConfigError
from motility3d.tensor import Tensor, backward

_SWAPPED = ("vol2col", "col2vol_add", "maxpool3d_forward", "maxpool3d_backward")


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


class use_backend:
    """Temporarily point the shared kernel entry points at one backend."""

    def __init__(self, mod):
        self.mod = mod

    def __enter__(self):
        self.saved = {name: getattr(kernels, name) for name in _SWAPPED}
        for name in _SWAPPED:
            setattr(kernels, name, getattr(self.mod, name))

    def __exit__(self, *exc):
        for name, fn in self.saved.items():
            setattr(kernels, name, fn)


def conv_geometry(dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 8, 30, 40)).astype(dtype)
    kt = kh = kw = 3
    st = sh = sw = 1
    pt = ph = pw = 1
    out_t, out_h, out_w = 8, 30, 40
    col = np.empty((x.shape[0] * kt * kh * kw, out_t * out_h * out_w), dtype=dtype)
    return x, col, (kt, kh, kw, st, sh, sw, pt, ph, pw, 0, out_t, out_h, out_w)


def bench_vol2col(mod, dtype, repeats):
    x, col, args = conv_geometry(dtype)
    mod.vol2col(x, col, *args)
    ms = best_of(lambda: mod.vol2col(x, col, *args), repeats)
    return ms, col.copy()


def bench_col2vol(mod, dtype, repeats):
    x, col, args = conv_geometry(dtype)
    rng = np.random.default_rng(1)
    col[...] = rng.standard_normal(col.shape).astype(dtype)
    gx = np.zeros_like(x)
    mod.col2vol_add(col, gx, *args)
    out = gx.copy()
    gx[...] = 0
    ms = best_of(lambda: mod.col2vol_add(col, gx, *args), repeats)
    return ms, out


def bench_maxpool_fwd(mod, dtype, repeats):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((64, 16, 60, 80)).astype(dtype)
    out = np.empty((64, 8, 30, 40), dtype=dtype)
    argmax = np.empty(out.shape, dtype=np.intc)
    args = (3, 3, 3, 2, 2, 2, 1, 1, 1)
    mod.maxpool3d_forward(x, out, argmax, *args)
    ms = best_of(lambda: mod.maxpool3d_forward(x, out, argmax, *args), repeats)
    return ms, (out.copy(), argmax.copy())


def bench_maxpool_bwd(mod, dtype, repeats):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((64, 16, 60, 80)).astype(dtype)
    out = np.empty((64, 8, 30, 40), dtype=dtype)
    argmax = np.empty(out.shape, dtype=np.intc)
    mod.maxpool3d_forward(x, out, argmax, 3, 3, 3, 2, 2, 2, 1, 1, 1)
    gout = rng.standard_normal(out.shape).astype(dtype)
    gx_flat = np.zeros((64, 16 * 60 * 80), dtype=dtype)
    mod.maxpool3d_backward(gout, argmax, gx_flat)
    result = gx_flat.copy()

    def step():
        gx_flat[...] = 0
        mod.maxpool3d_backward(gout, argmax, gx_flat)

    ms = best_of(step, repeats)
    return ms, result


def bench_conv3d_e2e(mod, dtype, repeats):
    rng = np.random.default_rng(4)
    x_data = rng.standard_normal((2, 16, 8, 32, 40)).astype(dtype)
    w_data = rng.standard_normal((32, 16, 3, 3, 3)).astype(dtype)

    def step():
        x = Tensor(x_data, requires_grad=True)
        w = Tensor(w_data, requires_grad=True)
        loss = ops.tensor_sum(ops.conv3d(x, w, (1, 1, 1), (1, 1, 1)))
        backward(loss)
        return x.grad, w.grad

    with use_backend(mod):
        gx, gw = step()
        ms = best_of(step, repeats)
    return ms, (gx.copy(), gw.copy())


BENCHES = (
    ("vol2col", bench_vol2col),
    ("col2vol_add", bench_col2vol),
    ("maxpool3d fwd", bench_maxpool_fwd),
    ("maxpool3d bwd", bench_maxpool_bwd),
    ("conv3d fwd+bwd", bench_conv3d_e2e),
)


def identical(a, b):
    if isinstance(a, tuple):
        return all(identical(x, y) for x, y in zip(a, b))
    return a.tobytes() == b.tobytes()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args()
    runtime.set_num_threads(1)
    dtype = np.dtype(args.dtype)

    np_mod = kernels.backend_module("numpy")
    try:
        cy_mod = kernels.backend_module("cython")
    except (ImportError, ConfigError):
        cy_mod = None
        print("compiled backend not built; timing the numpy fallback only\n")

    print(f"active backend: {kernels.BACKEND}, dtype {args.dtype}, "
          f"best of {args.repeats}\n")
    header = f"{'kernel':<16} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}  identical"
    print(header)
    print("-" * len(header))
    for name, fn in BENCHES:
        np_ms, np_out = fn(np_mod, dtype, args.repeats)
        if cy_mod is None:
            print(f"{name:<16} {np_ms:>10.2f} {'-':>10} {'-':>8}")
            continue
        cy_ms, cy_out = fn(cy_mod, dtype, args.repeats)
        same = identical(np_out, cy_out)
        print(f"{name:<16} {np_ms:>10.2f} {cy_ms:>10.2f} {np_ms / cy_ms:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
