# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: conv3d gather/scatter and 3D max pooling.

Must stay contract-identical to motility3d._kernels_np (row/column layout,
ascending kernel-offset accumulation order, first-maximum tie breaking); the
test suite asserts bit-identical outputs between the two backends.
"""

ctypedef fused floating:
    float
    double


cdef inline void _valid_range(Py_ssize_t a, Py_ssize_t stride, Py_ssize_t extent,
                              Py_ssize_t count, Py_ssize_t* lo, Py_ssize_t* hi):
    # Output indices o in [lo, hi) give 0 <= a + o*stride < extent.
    if a >= 0:
        lo[0] = 0
    else:
        lo[0] = (-a + stride - 1) // stride
    if extent - 1 - a < 0:
        hi[0] = 0
    else:
        hi[0] = (extent - 1 - a) // stride + 1
    if hi[0] > count:
        hi[0] = count
    if lo[0] > hi[0]:
        lo[0] = hi[0]


def vol2col(floating[:, :, :, ::1] x, floating[:, ::1] col,
            Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw,
            Py_ssize_t pt, Py_ssize_t ph, Py_ssize_t pw,
            Py_ssize_t t_begin, Py_ssize_t t_count,
            Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t C = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t c, it, ih, iw, ot, oh, ow, row, pos
    cdef Py_ssize_t a_t, a_h, a_w, t_lo, t_hi, h_lo, h_hi, w_lo, w_hi, ti, hi

    for c in range(C):
        for it in range(kt):
            a_t = t_begin * st - pt + it
            _valid_range(a_t, st, T, t_count, &t_lo, &t_hi)
            for ih in range(kh):
                a_h = ih - ph
                _valid_range(a_h, sh, H, out_h, &h_lo, &h_hi)
                for iw in range(kw):
                    a_w = iw - pw
                    _valid_range(a_w, sw, W, out_w, &w_lo, &w_hi)
                    row = ((c * kt + it) * kh + ih) * kw + iw
                    pos = 0
                    for ot in range(t_count):
                        if ot < t_lo or ot >= t_hi:
                            for ow in range(out_h * out_w):
                                col[row, pos + ow] = 0
                            pos += out_h * out_w
                            continue
                        ti = a_t + ot * st
                        for oh in range(out_h):
                            if oh < h_lo or oh >= h_hi:
                                for ow in range(out_w):
                                    col[row, pos + ow] = 0
                                pos += out_w
                                continue
                            hi = a_h + oh * sh
                            for ow in range(w_lo):
                                col[row, pos + ow] = 0
                            for ow in range(w_lo, w_hi):
                                col[row, pos + ow] = x[c, ti, hi, a_w + ow * sw]
                            for ow in range(w_hi, out_w):
                                col[row, pos + ow] = 0
                            pos += out_w


def col2vol_add(floating[:, ::1] col, floating[:, :, :, ::1] gx,
                Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
                Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw,
                Py_ssize_t pt, Py_ssize_t ph, Py_ssize_t pw,
                Py_ssize_t t_begin, Py_ssize_t t_count,
                Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t C = gx.shape[0], T = gx.shape[1], H = gx.shape[2], W = gx.shape[3]
    cdef Py_ssize_t c, it, ih, iw, ot, oh, ow, row, pos
    cdef Py_ssize_t a_t, a_h, a_w, t_lo, t_hi, h_lo, h_hi, w_lo, w_hi, ti, hi

    for c in range(C):
        for it in range(kt):
            a_t = t_begin * st - pt + it
            _valid_range(a_t, st, T, t_count, &t_lo, &t_hi)
            for ih in range(kh):
                a_h = ih - ph
                _valid_range(a_h, sh, H, out_h, &h_lo, &h_hi)
                for iw in range(kw):
                    a_w = iw - pw
                    _valid_range(a_w, sw, W, out_w, &w_lo, &w_hi)
                    row = ((c * kt + it) * kh + ih) * kw + iw
                    for ot in range(t_lo, t_hi):
                        ti = a_t + ot * st
                        pos = ot * out_h * out_w
                        for oh in range(h_lo, h_hi):
                            hi = a_h + oh * sh
                            for ow in range(w_lo, w_hi):
                                gx[c, ti, hi, a_w + ow * sw] += col[row, pos + oh * out_w + ow]


def maxpool3d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out,
                      int[:, :, :, ::1] argmax,
                      Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
                      Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw,
                      Py_ssize_t pt, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t C = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t out_t = out.shape[1], out_h = out.shape[2], out_w = out.shape[3]
    cdef Py_ssize_t c, ot, oh, ow, ti, hi, wi, t0, h0, w0, t1, h1, w1
    cdef Py_ssize_t best_idx
    cdef floating best, v

    for c in range(C):
        for ot in range(out_t):
            t0 = ot * st - pt
            t1 = t0 + kt
            if t0 < 0:
                t0 = 0
            if t1 > T:
                t1 = T
            for oh in range(out_h):
                h0 = oh * sh - ph
                h1 = h0 + kh
                if h0 < 0:
                    h0 = 0
                if h1 > H:
                    h1 = H
                for ow in range(out_w):
                    w0 = ow * sw - pw
                    w1 = w0 + kw
                    if w0 < 0:
                        w0 = 0
                    if w1 > W:
                        w1 = W
                    best_idx = -1
                    best = 0
                    for ti in range(t0, t1):
                        for hi in range(h0, h1):
                            for wi in range(w0, w1):
                                v = x[c, ti, hi, wi]
                                if best_idx < 0 or v > best:
                                    best = v
                                    best_idx = (ti * H + hi) * W + wi
                    out[c, ot, oh, ow] = best
                    argmax[c, ot, oh, ow] = <int> best_idx


def maxpool3d_backward(floating[:, :, :, ::1] gout, int[:, :, :, ::1] argmax,
                       floating[:, ::1] gx_flat):
    # gx_flat: (C, T*H*W)
    cdef Py_ssize_t C = gout.shape[0]
    cdef Py_ssize_t n = gout.shape[1] * gout.shape[2] * gout.shape[3]
    cdef Py_ssize_t c, i
    cdef floating[:, ::1] g2 = <floating[:C, :n]> &gout[0, 0, 0, 0]
    cdef int[:, ::1] a2 = <int[:C, :n]> &argmax[0, 0, 0, 0]
    for c in range(C):
        for i in range(n):
            gx_flat[c, a2[c, i]] += g2[c, i]
