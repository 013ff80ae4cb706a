"""Central finite-difference gradient verification.

``grad_check`` compares the analytic gradient of a scalar-valued tensor
function against central differences in 64-bit mode and reports the worst
relative error |analytic - numeric| / max(1, |analytic|, |numeric|).

Nonsmooth points (relu/maxpool kinks) are excluded automatically: each
element's difference quotient is computed at two step sizes (eps and
2*eps); smooth points agree to O(eps^2) while a kink anywhere along the
perturbation path makes the two quotients disagree at first order, so
elements whose quotients differ by more than ``kink_tol`` (relative) are
skipped. Large tensors can be subsampled via ``max_elements``.
"""

import numpy as np

from .tensor import Tensor, backward, no_grad

PRIMITIVE_THRESHOLD = 1e-6
E2E_THRESHOLD = 1e-4


def _scalar(f, data):
    with no_grad():
        out = f(Tensor(data))
    return float(out.data.reshape(-1)[0])


def grad_check(f, x, eps=1e-5, max_elements=None, seed=0, kink_tol=1e-3,
               return_details=False):
    """Max relative error between analytic and numeric gradients of f at x.

    f must map one Tensor to a scalar Tensor; evaluation runs in float64
    regardless of x's dtype. With ``return_details`` the result is
    (max_error, checked_count, skipped_count).
    """
    base = np.asarray(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    loss = f(probe)
    backward(loss)
    analytic = (probe.grad if probe.grad is not None else np.zeros_like(base)).reshape(-1)

    size = base.size
    if max_elements is not None and max_elements < size:
        rng = np.random.default_rng(seed)
        indices = rng.choice(size, size=max_elements, replace=False)
    else:
        indices = np.arange(size)

    flat = base.reshape(-1)
    worst = 0.0
    checked = 0
    skipped = 0
    for i in indices:
        orig = flat[i]

        def at(delta):
            flat[i] = orig + delta
            try:
                return _scalar(f, base)
            finally:
                flat[i] = orig

        n1 = (at(eps) - at(-eps)) / (2 * eps)
        n2 = (at(2 * eps) - at(-2 * eps)) / (4 * eps)
        if abs(n1 - n2) > kink_tol * max(1.0, abs(n1), abs(n2)):
            skipped += 1
            continue
        a = float(analytic[i])
        err = abs(a - n1) / max(1.0, abs(a), abs(n1))
        worst = max(worst, err)
        checked += 1

    if return_details:
        return worst, checked, skipped
    return worst


def run_suite(arch, seed=0):
    """Gradient-check every primitive plus a tiny end-to-end model.

    Returns [(check name, max relative error, threshold), ...]; primitives
    are held to PRIMITIVE_THRESHOLD, the end-to-end model (which crosses
    relu/maxpool kinks, excluded pointwise) to E2E_THRESHOLD.
    """
    from . import ops
    from .models import ARCH_SPECS, build_model
    from .optim import class_weights

    rng = np.random.default_rng(seed)

    def t(*shape):
        return Tensor(rng.standard_normal(shape))

    results = []

    def prim(name, f, x, **kw):
        results.append((name, grad_check(f, x, **kw), PRIMITIVE_THRESHOLD))

    prim("relu.x", lambda v: ops.tensor_sum(ops.relu(v)), t(3, 4))

    lx, lw, lb = t(3, 5), t(2, 5), t(2)
    prim("linear.x", lambda v: ops.tensor_sum(ops.linear(v, lw, lb)), lx)
    prim("linear.w", lambda v: ops.tensor_sum(ops.linear(lx, v, lb)), lw)
    prim("linear.b", lambda v: ops.tensor_sum(ops.linear(lx, lw, v)), lb)

    cx, cw = t(2, 2, 4, 5, 6), t(3, 2, 2, 3, 3)
    stride, pad = (1, 2, 2), (1, 1, 1)
    prim("conv3d.x", lambda v: ops.tensor_sum(ops.conv3d(v, cw, stride, pad)), cx)
    prim("conv3d.w", lambda v: ops.tensor_sum(ops.conv3d(cx, v, stride, pad)), cw)

    prim("maxpool3d.x", lambda v: ops.tensor_sum(ops.maxpool3d(v)), t(1, 2, 5, 6, 7))
    prim("avgpool3d.x", lambda v: ops.tensor_sum(ops.avgpool3d(v)), t(2, 3, 2, 3, 4))

    bx, bg, bb = t(2, 3, 2, 2, 2), t(3), t(3)

    def bn_state(gamma, beta):
        return ops.BatchNormState(
            gamma, beta, np.zeros(3, dtype=np.float64), np.ones(3, dtype=np.float64)
        )

    prim(
        "batchnorm3d.x",
        lambda v: ops.tensor_sum(ops.batchnorm3d(v, bn_state(bg, bb), training=True)),
        bx,
    )
    prim(
        "batchnorm3d.gamma",
        lambda v: ops.tensor_sum(ops.batchnorm3d(bx, bn_state(v, bb), training=True)),
        bg,
    )
    prim(
        "batchnorm3d.beta",
        lambda v: ops.tensor_sum(ops.batchnorm3d(bx, bn_state(bg, v), training=True)),
        bb,
    )

    aa, ab = t(3, 4), t(3, 4)
    prim("add.a", lambda v: ops.tensor_sum(ops.add(v, ab)), aa)
    prim("mul.a", lambda v: ops.tensor_sum(ops.mul(v, ab)), aa)
    ca, cb = t(3, 4), t(3, 2)
    prim("concat.a", lambda v: ops.tensor_sum(ops.concat(v, cb)), ca)
    prim("concat.b", lambda v: ops.tensor_sum(ops.concat(ca, v)), cb)

    logits = t(4, 3)
    targets = rng.integers(0, 3, size=4)
    wce_w = class_weights([52, 9, 24])
    prim(
        "weighted_cross_entropy.logits",
        lambda v: ops.weighted_cross_entropy(v, targets, wce_w),
        logits,
    )

    # End-to-end: tiny clip through the full architecture (inference mode;
    # a one-clip batch leaves training-mode batch norm degenerate at the
    # deepest stage) into the weighted loss.
    spec = ARCH_SPECS[arch]
    model = build_model(arch, seed=seed, dtype=np.float64)
    clip = Tensor(rng.standard_normal((1, 1, 8, 16, 20)))
    tab = Tensor(rng.standard_normal((1, spec.tabular_width))) if spec.uses_tabular else None
    label = np.array([1])

    def e2e_clip(v):
        return ops.weighted_cross_entropy(
            model.forward(v, tab, training=False), label, wce_w
        )

    err = grad_check(e2e_clip, clip, max_elements=6, seed=seed)
    results.append((f"model.{arch}.clip", err, E2E_THRESHOLD))

    if spec.uses_tabular:

        def e2e_tab(v):
            return ops.weighted_cross_entropy(
                model.forward(clip, v, training=False), label, wce_w
            )

        err = grad_check(e2e_tab, tab, max_elements=4, seed=seed)
        results.append((f"model.{arch}.tabular", err, E2E_THRESHOLD))

    return results
