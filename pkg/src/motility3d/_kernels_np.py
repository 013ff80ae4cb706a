"""Pure-numpy kernel fallback.

Implements the same four entry points as the compiled extension
(:mod:`motility3d._kernels_cy`) using stride tricks and vectorized
scatter/gather. Selected automatically when the extension is unavailable,
or explicitly via ``MOTILITY3D_KERNELS=numpy``.

Contracts shared with the compiled backend:

* ``vol2col``/``col2vol_add`` use row order ``((c*kt + it)*kh + ih)*kw + iw``
  and column order ``((t - t_begin)*out_h + h)*out_w + w``.
* ``col2vol_add`` applies kernel offsets in ascending ``(it, ih, iw)`` order
  per input element, so both backends accumulate bit-identically.
* max pooling scans windows in ascending flattened order and keeps the first
  maximum, so ties resolve to the lowest input index in both backends.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

# Cap on scratch buffers used by the windowed max-pool path.
_MAX_WINDOW_BYTES = 64 << 20


def vol2col(x, col, kt, kh, kw, st, sh, sw, pt, ph, pw, t_begin, t_count, out_h, out_w):
    c = x.shape[0]
    if pt or ph or pw:
        x = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    s0, s1, s2, s3 = x.strides
    base = x[:, t_begin * st:]
    win = as_strided(
        base,
        shape=(c, kt, kh, kw, t_count, out_h, out_w),
        strides=(s0, s1, s2, s3, st * s1, sh * s2, sw * s3),
    )
    col[...] = win.reshape(c * kt * kh * kw, t_count * out_h * out_w)


def col2vol_add(col, gx, kt, kh, kw, st, sh, sw, pt, ph, pw, t_begin, t_count, out_h, out_w):
    c, t, h, w = gx.shape
    padded = bool(pt or ph or pw)
    if padded:
        acc = np.zeros((c, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=gx.dtype)
    else:
        acc = gx
    v = col.reshape(c, kt, kh, kw, t_count, out_h, out_w)
    t0 = t_begin * st
    for it in range(kt):
        for ih in range(kh):
            for iw in range(kw):
                acc[
                    :,
                    t0 + it : t0 + it + st * t_count : st,
                    ih : ih + sh * out_h : sh,
                    iw : iw + sw * out_w : sw,
                ] += v[:, it, ih, iw]
    if padded:
        gx += acc[:, pt : pt + t, ph : ph + h, pw : pw + w]


def maxpool3d_forward(x, out, argmax, kt, kh, kw, st, sh, sw, pt, ph, pw):
    c, t, h, w = x.shape
    _, out_t, out_h, out_w = out.shape
    if pt or ph or pw:
        xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=-np.inf)
    else:
        xp = x
    s0, s1, s2, s3 = xp.strides
    ksize = kt * kh * kw

    # Chunk along the output temporal axis to bound the window copy.
    slab = c * out_h * out_w * ksize * x.itemsize
    chunk = max(1, min(out_t, _MAX_WINDOW_BYTES // max(1, slab)))
    for t0 in range(0, out_t, chunk):
        tc = min(chunk, out_t - t0)
        win = as_strided(
            xp[:, t0 * st:],
            shape=(c, tc, out_h, out_w, kt, kh, kw),
            strides=(s0, st * s1, sh * s2, sw * s3, s1, s2, s3),
        )
        flat = win.reshape(c, tc, out_h, out_w, ksize)
        idx = flat.argmax(axis=-1)
        out[:, t0 : t0 + tc] = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        # Window-local argmax -> absolute flat index into (t, h, w).
        ikt, rem = np.divmod(idx, kh * kw)
        ikh, ikw = np.divmod(rem, kw)
        ot = np.arange(t0, t0 + tc).reshape(1, tc, 1, 1)
        oh = np.arange(out_h).reshape(1, 1, out_h, 1)
        ow = np.arange(out_w).reshape(1, 1, 1, out_w)
        ti = ot * st - pt + ikt
        hi = oh * sh - ph + ikh
        wi = ow * sw - pw + ikw
        argmax[:, t0 : t0 + tc] = (ti * h + hi) * w + wi


def maxpool3d_backward(gout, argmax, gx_flat):
    for ci in range(gx_flat.shape[0]):
        np.add.at(gx_flat[ci], argmax[ci].ravel(), gout[ci].ravel())
