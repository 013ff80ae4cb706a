"""Acceptance gate: eight release criteria with pinned tolerances.

Each test prints (and registers, via the ``acceptance`` fixture) one
"CRITERION n: PASS/FAIL - ..." line; the conftest terminal summary echoes
every registered line after the run. Criterion 6 trains the overfit
fixture for 200 epochs and dominates the suite's runtime (budget 15 min).
"""

import math
import os
import time

import numpy as np

from motility3d import ops
from motility3d.checkpoint import load_checkpoint, save_checkpoint
from motility3d.data import class_histogram, load_clip, load_manifest, split_dataset
from motility3d.errors import InsufficientFramesError
from motility3d.gradcheck import grad_check, run_suite
from motility3d.models import ARCH_SPECS, build_model, shape_chain
from motility3d.netpbm import read_frame, write_pgm, write_ppm
from motility3d.optim import (
    AdamState,
    OneCycleConfig,
    adam_step,
    class_weights,
    clip_gradients,
    one_cycle_lr,
)
from motility3d.tensor import Tensor, no_grad
from motility3d.train import TrainConfig, evaluate_checkpoint, train


# -- criterion 1: finite-difference gradient oracle ---------------------


def _weighted_sum(out, r):
    # break sum-symmetry (batch norm, add) with a fixed random weighting
    return ops.tensor_sum(ops.mul(out, r))


def _primitive_checks(rng):
    """Yield (name, max_rel_err) for every primitive at random shapes."""

    def t(*shape):
        return Tensor(rng.standard_normal(shape))

    def e(lo, hi):
        return int(rng.integers(lo, hi + 1))

    x = t(e(1, 6), e(1, 6))
    r = t(*x.shape)
    yield "relu", grad_check(lambda v: _weighted_sum(ops.relu(v), r), x)

    n, fin, fout = e(1, 6), e(1, 6), e(1, 6)
    lx, lw, lb, lr_ = t(n, fin), t(fout, fin), t(fout), t(n, fout)
    yield "linear.x", grad_check(lambda v: _weighted_sum(ops.linear(v, lw, lb), lr_), lx)
    yield "linear.w", grad_check(lambda v: _weighted_sum(ops.linear(lx, v, lb), lr_), lw)
    yield "linear.b", grad_check(lambda v: _weighted_sum(ops.linear(lx, lw, v), lr_), lb)

    dims = [e(1, 6) for _ in range(3)]
    kernel = [e(1, min(3, d)) for d in dims]
    stride = tuple(e(1, 2) for _ in range(3))
    pad = tuple(e(0, 1) for _ in range(3))
    cx = t(e(1, 2), e(1, 3), *dims)
    cw = t(e(1, 3), cx.shape[1], *kernel)
    with no_grad():
        cr = Tensor(
            rng.standard_normal(ops.conv3d(Tensor(cx.data), Tensor(cw.data), stride, pad).shape)
        )
    yield "conv3d.x", grad_check(
        lambda v: _weighted_sum(ops.conv3d(v, cw, stride, pad), cr), cx
    )
    yield "conv3d.w", grad_check(
        lambda v: _weighted_sum(ops.conv3d(cx, v, stride, pad), cr), cw
    )

    pdims = [e(2, 6) for _ in range(3)]
    pk = e(2, 3)
    px = t(e(1, 2), e(1, 2), *pdims)
    with no_grad():
        pr = Tensor(
            rng.standard_normal(
                ops.maxpool3d(Tensor(px.data), (pk, pk, pk), (2, 2, 2), (1, 1, 1)).shape
            )
        )
    yield "maxpool3d", grad_check(
        lambda v: _weighted_sum(ops.maxpool3d(v, (pk, pk, pk), (2, 2, 2), (1, 1, 1)), pr),
        px,
    )

    ax = t(e(1, 2), e(1, 4), e(1, 4), e(1, 4), e(1, 4))
    ar = t(ax.shape[0], ax.shape[1], 1, 1, 1)
    yield "avgpool3d", grad_check(lambda v: _weighted_sum(ops.avgpool3d(v), ar), ax)

    while True:
        bshape = (e(1, 3), e(1, 3), e(1, 3), e(1, 3), e(1, 3))
        if bshape[0] * bshape[2] * bshape[3] * bshape[4] > 1:
            break
    bx, bg, bb, br = t(*bshape), t(bshape[1]), t(bshape[1]), t(*bshape)

    def bn_state(gamma, beta):
        c = bshape[1]
        return ops.BatchNormState(gamma, beta, np.zeros(c), np.ones(c))

    yield "batchnorm3d.x", grad_check(
        lambda v: _weighted_sum(ops.batchnorm3d(v, bn_state(bg, bb), training=True), br), bx
    )
    yield "batchnorm3d.gamma", grad_check(
        lambda v: _weighted_sum(ops.batchnorm3d(bx, bn_state(v, bb), training=True), br), bg
    )
    yield "batchnorm3d.beta", grad_check(
        lambda v: _weighted_sum(ops.batchnorm3d(bx, bn_state(bg, v), training=True), br), bb
    )

    aa = t(e(1, 5), e(1, 5))
    ab, arw = t(*aa.shape), t(*aa.shape)
    yield "add", grad_check(lambda v: _weighted_sum(ops.add(v, ab), arw), aa)
    yield "mul", grad_check(lambda v: ops.tensor_sum(ops.mul(v, ab)), aa)

    ca = t(e(1, 4), e(1, 5))
    cb = t(ca.shape[0], e(1, 5))
    crw = t(ca.shape[0], ca.shape[1] + cb.shape[1])
    yield "concat.a", grad_check(lambda v: _weighted_sum(ops.concat(v, cb), crw), ca)
    yield "concat.b", grad_check(lambda v: _weighted_sum(ops.concat(ca, v), crw), cb)

    logits = t(e(1, 6), 3)
    targets = rng.integers(0, 3, size=logits.shape[0])
    wvec = rng.uniform(0.5, 3.0, size=3)
    yield "weighted_cross_entropy", grad_check(
        lambda v: ops.weighted_cross_entropy(v, targets, wvec), logits
    )


def test_criterion_1_gradient_oracle(acceptance):
    t0 = time.perf_counter()
    worst_prim = 0.0
    failures = []
    n_checks = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        for name, err in _primitive_checks(rng):
            n_checks += 1
            worst_prim = max(worst_prim, err)
            if err > 1e-6:
                failures.append(f"seed {seed} {name}: {err:.3e}")

    worst_e2e = 0.0
    for name, err, threshold in run_suite("resnet18_3d_tab", seed=0):
        if name.startswith("model."):
            worst_e2e = max(worst_e2e, err)
            if err > 1e-4:
                failures.append(f"{name}: {err:.3e}")
        elif err > threshold:
            failures.append(f"suite {name}: {err:.3e}")

    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 120.0
    acceptance.record(
        1,
        ok,
        f"primitive worst {worst_prim:.2e} (<= 1e-06, {n_checks} checks / 20 seeds), "
        f"e2e worst {worst_e2e:.2e} (<= 1e-04), {elapsed:.0f}s"
        + (f"; failures: {failures}" if failures else ""),
    )


# -- criterion 2: canonical shape chain ----------------------------------


def test_criterion_2_shape_anchor(acceptance):
    t0 = time.perf_counter()
    chain = dict(shape_chain("resnet18_3d", (1, 1, 50, 480, 640)))
    pre_pool = shape_chain("resnet18_3d", (1, 1, 50, 480, 640))[-1][1]
    anchors_ok = (
        chain["prep.conv"] == (64, 50, 240, 320)
        and chain["prep.pool"] == (64, 25, 120, 160)
        and chain["layer1"] == (64, 25, 120, 160)
        and chain["layer2"] == (128, 13, 60, 80)
        and chain["layer3"] == (256, 7, 30, 40)
        and pre_pool == (512, 4, 15, 20)
    )
    model = build_model("resnet18_3d_tab", seed=0)
    params = dict(model.named_parameters())
    fusion_ok = (
        params["fc1.weight"].shape == (84, 531)
        and params["fc2.weight"].shape == (3, 84)
        and ARCH_SPECS["resnet18_3d_tab"].tabular_width == 19
    )
    stages_ok = ARCH_SPECS["resnet34_3d_tab"].stage_counts == (3, 4, 6, 3) and shape_chain(
        "resnet34_3d_tab", (1, 1, 50, 480, 640)
    )[-1][1] == (512, 4, 15, 20)
    elapsed = time.perf_counter() - t0
    ok = anchors_ok and fusion_ok and stages_ok and elapsed <= 60.0
    acceptance.record(
        2,
        ok,
        f"pre-pool {pre_pool}, fusion 531 -> 84 -> 3, deep stages "
        f"{ARCH_SPECS['resnet34_3d_tab'].stage_counts}, {elapsed:.1f}s",
    )


# -- criterion 3: convolution vs brute force ------------------------------


def naive_conv3d(x, w, stride, padding):
    n, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((n, c, t + 2 * pt, h + 2 * ph, wd + 2 * pw), dtype=np.float64)
    xp[:, :, pt:pt + t, ph:ph + h, pw:pw + wd] = x
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, ot, oh, ow), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for ti in range(ot):
                for hi in range(oh):
                    for wi in range(ow):
                        patch = xp[
                            ni, :,
                            ti * st:ti * st + kt,
                            hi * sh:hi * sh + kh,
                            wi * sw:wi * sw + kw,
                        ]
                        out[ni, oi, ti, hi, wi] = float(np.sum(patch * w[oi]))
    return out


def test_criterion_3_conv_bruteforce(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(200):
        dtype = np.float32 if case % 2 else np.float64
        dims = [int(rng.integers(1, 7)) for _ in range(3)]
        kernel = [int(rng.integers(1, min(3, d) + 1)) for d in dims]
        stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
        pad = tuple(int(rng.integers(0, 2)) for _ in range(3))
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        x = rng.standard_normal((n, cin, *dims)).astype(dtype)
        w = rng.standard_normal((cout, cin, *kernel)).astype(dtype)
        with no_grad():
            got = ops.conv3d(Tensor(x), Tensor(w), stride, pad).data.astype(np.float64)
        want = naive_conv3d(x.astype(np.float64), w.astype(np.float64), stride, pad)
        denom = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
        worst = max(worst, float(np.max(np.abs(got - want) / denom)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed <= 60.0
    acceptance.record(
        3, ok, f"200 random cases, worst relative error {worst:.2e} (<= 1e-05), {elapsed:.0f}s"
    )


# -- criterion 4: loss formula values -------------------------------------


def test_criterion_4_loss_values(acceptance):
    # single sample, weight 2: loss = 2 * (ln(e^2 + 2) - 2)
    expected = 2.0 * (math.log(math.exp(2.0) + 2.0) - 2.0)
    with no_grad():
        got = float(
            ops.weighted_cross_entropy(
                Tensor(np.array([[2.0, 0.0, 0.0]])), np.array([0]), np.array([2.0, 1.0, 1.0])
            ).data
        )
        ln3_64 = float(
            ops.weighted_cross_entropy(
                Tensor(np.zeros((1, 3))), np.array([0]), np.ones(3)
            ).data
        )
        ln3_32 = float(
            ops.weighted_cross_entropy(
                Tensor(np.zeros((1, 3), dtype=np.float32)), np.array([0]), np.ones(3)
            ).data
        )
        huge = [
            float(
                ops.weighted_cross_entropy(
                    Tensor(np.array([row], dtype=np.float32)), np.array([0]), np.ones(3)
                ).data
            )
            for row in ([1000.0, -1000.0, 0.0], [-1000.0, 1000.0, 0.0], [1000.0, 1000.0, 1000.0])
        ]
    weighted_err = abs(got - expected)
    ln3_err = max(abs(ln3_64 - math.log(3.0)), abs(ln3_32 - math.log(3.0)))
    ok = weighted_err <= 1e-5 and ln3_err <= 1e-7 and all(np.isfinite(huge))
    acceptance.record(
        4,
        ok,
        f"weighted case {got:.9f} matches 2*(ln(e^2+2)-2) to {weighted_err:.1e} (<= 1e-05), "
        f"uniform case ln 3 to {ln3_err:.1e} (<= 1e-07), 1000-magnitude logits finite",
    )


# -- criterion 5: recipe constants ----------------------------------------


def test_criterion_5_recipe_constants(acceptance):
    import inspect

    clip_default = inspect.signature(clip_gradients).parameters["clip_value"].default
    decay_default = inspect.signature(AdamState.__init__).parameters["weight_decay"].default

    g = [np.array([-0.5, -0.05, 0.0, 0.2]), np.array([[0.15, -0.2]])]
    clip_gradients(g)
    clip_ok = (
        clip_default == 0.1
        and np.array_equal(g[0], [-0.1, -0.05, 0.0, 0.1])
        and np.array_equal(g[1], [[0.1, -0.1]])
    )

    # one Adam step from p=1, raw grad 0.5: clip to 0.1, add decay 1e-4 * p
    p = Tensor(np.array([1.0]))
    state = AdamState([p])
    grad = np.array([0.5])
    clip_gradients([grad])
    adam_step([p], [grad], state, lr=1e-3)
    eff = 0.1 + 1e-4 * 1.0
    closed_form = 1.0 - 1e-3 * eff / (abs(eff) + 1e-8)
    decay_ok = decay_default == 1e-4 and abs(float(p.data[0]) - closed_form) <= 1e-15

    w = class_weights([52, 9, 24])
    weights_ok = np.array_equal(w, [85 / 156, 85 / 27, 85 / 72]) and np.all(
        np.abs(w - [0.54487, 3.14815, 1.18056]) <= 1e-5
    )

    cycle_ok = True
    for total, max_lr in ((1000, 1e-2), (47, 1e-3), (4, 1e-1)):
        cfg = OneCycleConfig(total_steps=total, max_lr=max_lr)
        cycle_ok = cycle_ok and one_cycle_lr(0, cfg) == max_lr / 25.0
        cycle_ok = cycle_ok and one_cycle_lr(cfg.warmup_steps, cfg) == max_lr
        cycle_ok = cycle_ok and one_cycle_lr(total - 1, cfg) == max_lr / (25.0 * 1e4)

    ok = clip_ok and decay_ok and weights_ok and cycle_ok
    acceptance.record(
        5,
        ok,
        "clip 0.1 exact, decay 1e-4 step matches closed form, class weights "
        "[52,9,24] within 1e-5, one-cycle boundary values exact",
    )


# -- criterion 6: overfit fixture ------------------------------------------


def test_criterion_6_overfit(acceptance, overfit_corpus, tmp_path):
    cfg = TrainConfig(
        arch="resnet18_3d",
        manifest=overfit_corpus["manifest"],
        out_dir=str(tmp_path / "overfit"),
        max_epochs=200,
        batch_size=4,
        max_lr=1e-3,
        patience=10**9,
        frame_count=16,
        split_sizes=(8, 0, 0),
        split_seed=0,
        init_seed=0,
        shuffle_seed=0,
    )
    t0 = time.perf_counter()
    _, history = train(cfg)
    elapsed = time.perf_counter() - t0

    acc = [m.val_acc for m in history]
    first_perfect = next((m.epoch for m in history if m.val_acc == 1.0), None)
    loss_dropped = history[-1].train_loss < history[0].train_loss
    ok = (
        first_perfect is not None
        and first_perfect <= 200
        and acc[-1] == 1.0
        and loss_dropped
        and elapsed <= 900.0
    )
    acceptance.record(
        6,
        ok,
        f"train accuracy 1.0 first reached at epoch {first_perfect} (final {acc[-1]}), "
        f"loss {history[0].train_loss:.3f} -> {history[-1].train_loss:.2e}, "
        f"{elapsed:.0f}s (<= 900s)",
    )


# -- criterion 7: determinism and persistence -------------------------------


def test_criterion_7_determinism(acceptance, overfit_corpus, tmp_path):
    def run(tag):
        cfg = TrainConfig(
            arch="resnet18_3d",
            manifest=overfit_corpus["manifest"],
            out_dir=str(tmp_path / tag),
            max_epochs=2,
            batch_size=4,
            max_lr=1e-3,
            patience=1000,
            frame_count=16,
            split_sizes=(6, 2, 0),
            split_seed=0,
            init_seed=0,
            shuffle_seed=0,
        )
        ckpt_path, _ = train(cfg)
        return cfg, ckpt_path

    cfg, ckpt_a = run("a")
    _, ckpt_b = run("b")

    def read(path):
        with open(path, "rb") as fh:
            return fh.read()

    ckpt_identical = read(ckpt_a) == read(ckpt_b)
    metrics_identical = read(os.path.join(str(tmp_path / "a"), "metrics.csv")) == read(
        os.path.join(str(tmp_path / "b"), "metrics.csv")
    )

    model, meta = load_checkpoint(ckpt_a)
    resaved = str(tmp_path / "resaved.ckpt")
    save_checkpoint(model, meta, resaved)
    roundtrip_identical = read(ckpt_a) == read(resaved)

    loss, acc, _ = evaluate_checkpoint(model, meta, cfg.manifest, "val")
    eval_exact = acc == meta["best_val_acc"] and loss == meta["best_val_loss"]

    ok = ckpt_identical and metrics_identical and roundtrip_identical and eval_exact
    acceptance.record(
        7,
        ok,
        f"rerun checkpoint identical {ckpt_identical}, metrics identical "
        f"{metrics_identical}, round-trip identical {roundtrip_identical}, "
        f"eval reproduces logged best exactly {eval_exact}",
    )


# -- criterion 8: pipeline conformance ---------------------------------------


def test_criterion_8_pipeline(acceptance, histogram_manifest, tmp_path):
    frames50 = tmp_path / "fifty"
    frames50.mkdir()
    rng = np.random.default_rng(3)
    for i in range(50):
        write_pgm(
            str(frames50 / f"frame_{i:05d}.pgm"),
            rng.integers(0, 256, size=(8, 10)).astype(np.uint8),
        )
    clip = load_clip(str(frames50))
    fifty_ok = clip.shape == (1, 50, 8, 10) and clip.dtype == np.float32
    fifty_ok = fifty_ok and float(clip.min()) >= 0.0 and float(clip.max()) <= 1.0

    os.remove(str(frames50 / "frame_00049.pgm"))
    try:
        load_clip(str(frames50))
        rejects_49 = False
    except InsufficientFramesError:
        rejects_49 = True

    red = str(tmp_path / "red.ppm")
    write_ppm(red, np.array([[[255, 0, 0]]], dtype=np.uint8))
    luma = float(read_frame(red)[0, 0])
    luma_ok = abs(luma - 0.299) <= 1e-6

    samples = load_manifest(histogram_manifest)
    hist = [int(c) for c in class_histogram(samples)]
    hist_ok = hist == [52, 9, 24]

    split = split_dataset([s.participant_id for s in samples], seed=0)
    parts = (len(split.train), len(split.val), len(split.test))
    all_ids = sorted(
        list(split.train) + list(split.val) + list(split.test) + list(split.excluded)
    )
    split_ok = (
        parts == (63, 8, 9)
        and len(split.excluded) == 5
        and list(split.excluded) == sorted(split.excluded)
        and all_ids == sorted(s.participant_id for s in samples)
    )

    ok = fifty_ok and rejects_49 and luma_ok and hist_ok and split_ok
    acceptance.record(
        8,
        ok,
        f"50f clip in [0,1] and 49f rejected, luma {luma:.7f}, histogram {hist}, "
        f"split {parts} + {len(split.excluded)} excluded",
    )
