"""Differentiable operations over :class:`~motility3d.tensor.Tensor`.

Every op validates geometry, computes the forward result in the input dtype,
and registers a backward closure via ``tensor.from_op``. Convolution uses a
gather (vol2col) + GEMM formulation, chunked along the output temporal axis
so the column buffer stays within a fixed budget; pooling dispatches to the
kernel backend (compiled extension or numpy fallback, see
:mod:`motility3d.kernels`).

Convolution semantics are cross-correlation (no kernel flip) with no bias
term; every convolution in the supported models is followed by batch norm,
which subsumes it. Shape law per axis: out = floor((in + 2*pad - k)/s) + 1.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateBatchError, GeometryError, LabelError
from .tensor import Tensor, from_op

# Column-buffer budget for the chunked vol2col + GEMM convolution path.
_COL_BUDGET_BYTES = 64 << 20

_AXIS_NAMES = ("t", "h", "w")


def _acc(t, g):
    if t.requires_grad:
        t.accumulate_grad(g)


def _triple(value, name, minimum=1):
    if isinstance(value, (int, np.integer)):
        value = (value, value, value)
    trip = tuple(int(v) for v in value)
    if len(trip) != 3:
        raise GeometryError(f"{name} must be an int or a 3-tuple, got {value!r}")
    if any(v < minimum for v in trip):
        raise GeometryError(f"{name} entries must be >= {minimum}, got {trip}")
    return trip


def _out_extent(extent, k, s, p, axis, opname):
    if extent + 2 * p < k:
        raise GeometryError(
            f"{opname}: axis {_AXIS_NAMES[axis]} extent {extent} with padding {p} "
            f"is smaller than kernel {k}"
        )
    out = (extent + 2 * p - k) // s + 1
    if out < 1:
        raise GeometryError(f"{opname}: axis {_AXIS_NAMES[axis]} output extent {out} < 1")
    return out


def _require_ndim(x, ndim, opname):
    if x.ndim != ndim:
        raise GeometryError(f"{opname} expects a {ndim}-axis tensor, got shape {x.shape}")


def _require_same_dtype(opname, *tensors):
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ConfigError(f"{opname}: mixed dtypes {sorted(d.name for d in dtypes)}")


@dataclass(frozen=True)
class ConvGeometry:
    """Validated convolution geometry: kernel/stride/padding triples plus
    channel counts; weight layout is (out_channels, in_channels, kt, kh, kw)."""

    kernel: tuple
    stride: tuple
    padding: tuple
    in_channels: int
    out_channels: int

    @classmethod
    def for_weight(cls, w_shape, stride, padding):
        if len(w_shape) != 5:
            raise GeometryError(f"conv3d weight must have 5 axes, got shape {tuple(w_shape)}")
        o, c, kt, kh, kw = (int(v) for v in w_shape)
        if o < 1 or c < 1:
            raise GeometryError(f"conv3d weight channel counts must be >= 1, got shape {tuple(w_shape)}")
        kernel = _triple((kt, kh, kw), "kernel")
        return cls(kernel, _triple(stride, "stride"), _triple(padding, "padding", minimum=0), c, o)

    def out_extents(self, t, h, w):
        return tuple(
            _out_extent(e, k, s, p, axis, "conv3d")
            for axis, (e, k, s, p) in enumerate(
                zip((t, h, w), self.kernel, self.stride, self.padding)
            )
        )


def _conv_chunk(rows, out_h, out_w, out_t, itemsize):
    per_t = rows * out_h * out_w * itemsize
    return max(1, min(out_t, _COL_BUDGET_BYTES // max(1, per_t)))


def conv3d(x, w, stride=(1, 1, 1), padding=(0, 0, 0)):
    """3D cross-correlation of x: (N,C,T,H,W) with w: (O,C,kt,kh,kw), no bias."""
    _require_ndim(x, 5, "conv3d")
    geom = ConvGeometry.for_weight(w.shape, stride, padding)
    n_batch, c, t, h, wd_ = x.shape
    if c != geom.in_channels:
        raise GeometryError(
            f"conv3d: input has {c} channels but weight expects {geom.in_channels}"
        )
    _require_same_dtype("conv3d", x, w)
    out_t, out_h, out_w = geom.out_extents(t, h, wd_)
    kt, kh, kw = geom.kernel
    st, sh, sw = geom.stride
    pt, ph, pw = geom.padding

    xd = x.data
    w_mat = w.data.reshape(geom.out_channels, -1)
    rows = geom.in_channels * kt * kh * kw
    chunk = _conv_chunk(rows, out_h, out_w, out_t, xd.itemsize)
    out = np.empty((n_batch, geom.out_channels, out_t, out_h, out_w), dtype=xd.dtype)
    col = np.empty((rows, chunk * out_h * out_w), dtype=xd.dtype)
    for n in range(n_batch):
        for t0 in range(0, out_t, chunk):
            tc = min(chunk, out_t - t0)
            cs = col if tc == chunk else np.empty((rows, tc * out_h * out_w), dtype=xd.dtype)
            kernels.vol2col(xd[n], cs, kt, kh, kw, st, sh, sw, pt, ph, pw, t0, tc, out_h, out_w)
            out[n, :, t0 : t0 + tc] = (w_mat @ cs).reshape(
                geom.out_channels, tc, out_h, out_w
            )

    def backward(g):
        need_x = x.requires_grad
        need_w = w.requires_grad
        gx = np.zeros_like(xd) if need_x else None
        gw_mat = np.zeros_like(w_mat) if need_w else None
        col_b = np.empty((rows, chunk * out_h * out_w), dtype=xd.dtype) if need_w else None
        for n in range(n_batch):
            for t0 in range(0, out_t, chunk):
                tc = min(chunk, out_t - t0)
                g2 = g[n, :, t0 : t0 + tc].reshape(geom.out_channels, tc * out_h * out_w)
                if need_w:
                    cs = (
                        col_b
                        if tc == chunk
                        else np.empty((rows, tc * out_h * out_w), dtype=xd.dtype)
                    )
                    kernels.vol2col(
                        xd[n], cs, kt, kh, kw, st, sh, sw, pt, ph, pw, t0, tc, out_h, out_w
                    )
                    gw_mat += g2 @ cs.T
                if need_x:
                    colg = w_mat.T @ np.ascontiguousarray(g2)
                    kernels.col2vol_add(
                        colg, gx[n], kt, kh, kw, st, sh, sw, pt, ph, pw, t0, tc, out_h, out_w
                    )
        if need_x:
            _acc(x, gx)
        if need_w:
            _acc(w, gw_mat.reshape(w.shape))

    return from_op(out, (x, w), backward, "conv3d")


def maxpool3d(x, kernel=(3, 3, 3), stride=(2, 2, 2), padding=(1, 1, 1)):
    """3D max pooling; padding contributes -inf and is never selected."""
    _require_ndim(x, 5, "maxpool3d")
    kt, kh, kw = _triple(kernel, "kernel")
    st, sh, sw = _triple(stride, "stride")
    pt, ph, pw = _triple(padding, "padding", minimum=0)
    # Each window must overlap the input, or its max would be -inf.
    if pt >= kt or ph >= kh or pw >= kw:
        raise GeometryError("maxpool3d: padding must be smaller than the kernel per axis")
    n_batch, c, t, h, w = x.shape
    out_t = _out_extent(t, kt, st, pt, 0, "maxpool3d")
    out_h = _out_extent(h, kh, sh, ph, 1, "maxpool3d")
    out_w = _out_extent(w, kw, sw, pw, 2, "maxpool3d")

    xd = x.data
    out = np.empty((n_batch, c, out_t, out_h, out_w), dtype=xd.dtype)
    argmax = np.empty(out.shape, dtype=np.intc)
    for n in range(n_batch):
        kernels.maxpool3d_forward(xd[n], out[n], argmax[n], kt, kh, kw, st, sh, sw, pt, ph, pw)

    def backward(g):
        gx = np.zeros_like(xd)
        flat = gx.reshape(n_batch, c, t * h * w)
        for n in range(n_batch):
            kernels.maxpool3d_backward(np.ascontiguousarray(g[n]), argmax[n], flat[n])
        _acc(x, gx)

    return from_op(out, (x,), backward, "maxpool3d")


def avgpool3d(x, kernel=None):
    """Global average pooling: kernel must equal the full (T,H,W) extents."""
    _require_ndim(x, 5, "avgpool3d")
    t, h, w = x.shape[2:]
    if kernel is not None and _triple(kernel, "kernel") != (t, h, w):
        raise GeometryError(
            f"avgpool3d kernel {tuple(kernel)} must equal the input extents {(t, h, w)}"
        )
    count = t * h * w
    out = x.data.mean(axis=(2, 3, 4), keepdims=True)

    def backward(g):
        _acc(x, np.broadcast_to(g / count, x.shape))

    return from_op(out, (x,), backward, "avgpool3d")


class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    gamma/beta are learnable tensors; running_mean/running_var are plain
    arrays mutated only by training-mode forwards. Mode is chosen per call
    (``batchnorm3d(..., training=...)``), not stored here.
    """

    __slots__ = ("gamma", "beta", "running_mean", "running_var", "eps", "momentum")

    def __init__(self, gamma, beta, running_mean, running_var, eps=1e-5, momentum=0.1):
        c = gamma.shape[0]
        for name, v in (("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
            if v.shape != (c,):
                raise GeometryError(f"batchnorm {name} must have shape ({c},), got {v.shape}")
        if eps <= 0:
            raise ConfigError("batchnorm eps must be > 0")
        if np.any(running_var < 0):
            raise ConfigError("batchnorm running_var must be >= 0")
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.eps = float(eps)
        self.momentum = float(momentum)

    @classmethod
    def create(cls, channels, dtype=np.float32):
        return cls(
            Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            np.zeros(channels, dtype=dtype),
            np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


def batchnorm3d(x, state, training):
    """Per-channel batch normalization over (N,T,H,W).

    Training mode normalizes with biased batch statistics, updates the
    running statistics (the unbiased variance feeds running_var), and is
    differentiable through the batch statistics. Inference mode uses the
    running statistics as constants.
    """
    _require_ndim(x, 5, "batchnorm3d")
    n_batch, c = x.shape[:2]
    if c != state.channels:
        raise GeometryError(
            f"batchnorm3d: input has {c} channels but state expects {state.channels}"
        )
    _require_same_dtype("batchnorm3d", x, state.gamma, state.beta)
    xd = x.data
    gamma, beta = state.gamma, state.beta
    axes = (0, 2, 3, 4)

    def bc(v):
        return v.reshape(1, c, 1, 1, 1)

    if training:
        m = xd.size // c
        if m < 2:
            raise DegenerateBatchError(
                f"batchnorm3d training mode needs >= 2 values per channel, got {m}"
            )
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv = 1.0 / np.sqrt(var + np.asarray(state.eps, dtype=xd.dtype))
        scale = gamma.data * inv
        out = xd * bc(scale) + bc(beta.data - mean * scale)
        mom = state.momentum
        state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
        state.running_var[...] = (1 - mom) * state.running_var + mom * (var * m / (m - 1))

        def backward(g):
            xhat = (xd - bc(mean)) * bc(inv)
            dbeta = g.sum(axis=axes)
            dgamma = (g * xhat).sum(axis=axes)
            if x.requires_grad:
                s1 = gamma.data * dbeta
                s2 = gamma.data * dgamma
                dx = (g * bc(gamma.data) - (bc(s1) + xhat * bc(s2)) / m) * bc(inv)
                _acc(x, dx)
            _acc(state.gamma, dgamma)
            _acc(state.beta, dbeta)

    else:
        inv = 1.0 / np.sqrt(state.running_var + np.asarray(state.eps, dtype=xd.dtype))
        mean = state.running_mean.copy()
        scale = gamma.data * inv
        out = xd * bc(scale) + bc(beta.data - mean * scale)

        def backward(g):
            if x.requires_grad:
                _acc(x, g * bc(gamma.data * inv))
            if state.gamma.requires_grad or state.beta.requires_grad:
                xhat = (xd - bc(mean)) * bc(inv)
                _acc(state.gamma, (g * xhat).sum(axis=axes))
                _acc(state.beta, g.sum(axis=axes))

    return from_op(out, (x, state.gamma, state.beta), backward, "batchnorm3d")


def relu(x):
    """Elementwise max(0, x); the gradient at exactly 0 is 0."""
    out = np.maximum(x.data, 0)

    def backward(g):
        _acc(x, g * (x.data > 0))

    return from_op(out, (x,), backward, "relu")


def linear(x, w, b):
    """Affine map: out = x @ w.T + b for x: (N,F_in), w: (F_out,F_in), b: (F_out,)."""
    _require_ndim(x, 2, "linear")
    _require_ndim(w, 2, "linear weight")
    _require_ndim(b, 1, "linear bias")
    if x.shape[1] != w.shape[1] or b.shape[0] != w.shape[0]:
        raise GeometryError(
            f"linear: incompatible shapes x={x.shape}, w={w.shape}, b={b.shape}"
        )
    _require_same_dtype("linear", x, w, b)
    out = x.data @ w.data.T + b.data

    def backward(g):
        if x.requires_grad:
            _acc(x, g @ w.data)
        if w.requires_grad:
            _acc(w, g.T @ x.data)
        _acc(b, g.sum(axis=0))

    return from_op(out, (x, w, b), backward, "linear")


def concat(a, b):
    """Feature-axis concatenation of (N,F1) and (N,F2) into (N,F1+F2)."""
    _require_ndim(a, 2, "concat")
    _require_ndim(b, 2, "concat")
    if a.shape[0] != b.shape[0]:
        raise GeometryError(f"concat: batch extents differ, {a.shape[0]} vs {b.shape[0]}")
    _require_same_dtype("concat", a, b)
    f1 = a.shape[1]
    out = np.concatenate((a.data, b.data), axis=1)

    def backward(g):
        _acc(a, g[:, :f1])
        _acc(b, g[:, f1:])

    return from_op(out, (a, b), backward, "concat")


def add(a, b):
    """Elementwise sum of identically shaped tensors (residual shortcut)."""
    if a.shape != b.shape:
        raise GeometryError(f"add: shape mismatch {a.shape} vs {b.shape}")
    _require_same_dtype("add", a, b)
    out = a.data + b.data

    def backward(g):
        _acc(a, g)
        _acc(b, g)

    return from_op(out, (a, b), backward, "add")


def mul(a, b):
    """Elementwise product of identically shaped tensors."""
    if a.shape != b.shape:
        raise GeometryError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    _require_same_dtype("mul", a, b)
    out = a.data * b.data

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return from_op(out, (a, b), backward, "mul")


def tensor_sum(x):
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(x.data.sum())

    def backward(g):
        _acc(x, np.broadcast_to(g, x.shape))

    return from_op(out, (x,), backward, "sum")


def reshape(x, shape):
    """Reshape preserving element count and order."""
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise GeometryError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def backward(g):
        _acc(x, g.reshape(x.shape))

    return from_op(np.ascontiguousarray(out), (x,), backward, "reshape")


def weighted_cross_entropy(logits, target, weight):
    """Class-weighted cross entropy from raw logits.

    Per sample: weight[class] * (-logit[class] + log sum_j exp(logit[j])),
    with the log-sum-exp max-shifted for stability. The batch reduction is
    the plain mean of the weighted per-sample losses, sum(loss_i) / N, so a
    single sample of weight w scores exactly w times its unweighted loss.
    """
    _require_ndim(logits, 2, "weighted_cross_entropy")
    z = logits.data
    n, k = z.shape
    tgt = np.asarray(target)
    if tgt.shape != (n,) or tgt.dtype.kind not in "iu":
        raise LabelError(
            f"weighted_cross_entropy: target must be {n} integer class indices"
        )
    if np.any(tgt < 0) or np.any(tgt >= k):
        raise LabelError(f"weighted_cross_entropy: class indices must lie in [0,{k})")
    wv = np.asarray(weight, dtype=z.dtype)
    if wv.ndim == 0:
        wv = np.full(k, wv, dtype=z.dtype)
    if wv.shape != (k,):
        raise ConfigError(f"weighted_cross_entropy: weight must be a length-{k} vector")
    if np.any(wv <= 0):
        raise ConfigError("weighted_cross_entropy: weights must be strictly positive")

    mx = z.max(axis=1, keepdims=True)
    ez = np.exp(z - mx)
    se = ez.sum(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(se[:, 0])
    rows = np.arange(n)
    wi = wv[tgt]
    out = np.asarray((wi * (lse - z[rows, tgt])).sum() / n)

    def backward(g):
        if logits.requires_grad:
            d = ez / se
            d[rows, tgt] -= 1
            _acc(logits, d * (wi / n)[:, None] * g)

    return from_op(out, (logits,), backward, "weighted_cross_entropy")
