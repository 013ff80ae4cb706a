"""Training loop, evaluation, and their configuration.

The loop follows a fixed recipe: per batch, forward -> weighted
cross-entropy -> backward -> elementwise gradient clipping (0.1) -> Adam
step with the one-cycle learning rate (total_steps = max_epochs *
batches_per_epoch). Early stopping watches validation loss with a patience
rule; the best-validation-loss checkpoint is kept.

Two identical runs produce bit-identical checkpoints and metrics CSVs in
the default execution mode. Wall-clock timing therefore goes to a separate
``timing.csv`` so ``metrics.csv`` stays run-invariant.
"""

import json
import os
import time
from dataclasses import dataclass, fields

import numpy as np

from . import data as datamod
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericsError
from .models import ARCH_SPECS, build_model
from .ops import weighted_cross_entropy
from .optim import AdamState, OneCycleConfig, adam_step, class_weights, clip_gradients, one_cycle_lr
from .tensor import Tensor, backward, no_grad, zero_grads

METRICS_HEADER = "epoch,train_loss,val_loss,val_acc,lr"


@dataclass
class TrainConfig:
    """Training configuration; JSON configs map 1:1 onto these fields and
    unknown keys are rejected."""

    arch: str
    manifest: str
    out_dir: str
    tabular: str = None
    init_seed: int = 0
    split_seed: int = 0
    shuffle_seed: int = 0
    max_lr: float = 1e-3
    max_epochs: int = 50
    batch_size: int = 4
    patience: int = 3
    min_delta: float = 1e-4
    clip_value: float = 0.1
    weight_decay: float = 1e-4
    frame_count: int = 50
    frame_size: tuple = None  # (H, W); None accepts any consistent size
    fit_frames: bool = False
    split_sizes: tuple = (63, 8, 9)
    manifest_delimiter: str = ","
    tabular_delimiter: str = ","

    def __post_init__(self):
        if self.arch not in ARCH_SPECS:
            raise ConfigError(
                f"unknown architecture {self.arch!r}; expected one of {sorted(ARCH_SPECS)}"
            )
        for name in ("max_epochs", "batch_size", "patience", "frame_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("max_lr", "min_delta", "clip_value", "weight_decay"):
            if float(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.frame_size is not None:
            self.frame_size = tuple(int(v) for v in self.frame_size)
            if len(self.frame_size) != 2 or any(v < 1 for v in self.frame_size):
                raise ConfigError(f"frame_size must be [H, W] positives, got {self.frame_size}")
        self.split_sizes = tuple(int(v) for v in self.split_sizes)
        if len(self.split_sizes) != 3 or self.split_sizes[0] < 1 or any(
            v < 0 for v in self.split_sizes
        ):
            raise ConfigError(
                f"split_sizes must be [train>=1, val>=0, test>=0], got {list(self.split_sizes)}"
            )
        if ARCH_SPECS[self.arch].uses_tabular and not self.tabular:
            raise ConfigError(f"{self.arch} requires a 'tabular' CSV path")


def load_train_config(path):
    """Read a JSON config with exactly the TrainConfig fields."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    for required in ("arch", "manifest", "out_dir"):
        if required not in raw:
            raise ConfigError(f"{path}: missing required key {required!r}")
    cfg = TrainConfig(**raw)
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    cfg.manifest = _resolve(cfg.manifest)
    cfg.tabular = _resolve(cfg.tabular)
    cfg.out_dir = _resolve(cfg.out_dir)
    return cfg


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float

    def csv_row(self):
        return (
            f"{self.epoch},{float(self.train_loss)!r},{float(self.val_loss)!r},"
            f"{float(self.val_acc)!r},{float(self.lr)!r}"
        )


def _tabular_vectors(cfg, spec, samples, train_ids):
    """Standardized per-participant feature vectors, stats fit on train only."""
    if not spec.uses_tabular:
        return None, None
    records = datamod.load_tabular(cfg.tabular, cfg.tabular_delimiter)
    by_id = {r.participant_id: r for r in records}
    missing = sorted(s.participant_id for s in samples if s.participant_id not in by_id)
    if missing:
        raise DataError(f"tabular file lacks rows for participants {missing}")
    stats = datamod.fit_standardizer(records, train_ids)
    vectors = {
        s.participant_id: datamod.standardize(by_id[s.participant_id], stats)
        for s in samples
    }
    return vectors, stats


def _assemble(batch, vectors, cfg):
    clips = np.stack(
        [
            datamod.load_clip(s.frames_dir, cfg.frame_count, cfg.frame_size, cfg.fit_frames)
            for s in batch
        ]
    )
    clip_t = Tensor(clips)
    tab_t = None
    if vectors is not None:
        tab_t = Tensor(np.stack([vectors[s.participant_id] for s in batch]))
    labels = np.array([s.label for s in batch], dtype=np.int64)
    return clip_t, tab_t, labels


def evaluate_samples(model, samples, vectors, weights, cfg):
    """Deterministic inference over ``samples`` in order.

    Returns (mean batch loss, accuracy, 3x3 confusion counts[true, pred]).
    """
    losses = []
    confusion = np.zeros((3, 3), dtype=np.int64)
    correct = 0
    for start in range(0, len(samples), cfg.batch_size):
        batch = samples[start : start + cfg.batch_size]
        clip_t, tab_t, labels = _assemble(batch, vectors, cfg)
        with no_grad():
            logits = model.forward(clip_t, tab_t, training=False)
            loss = weighted_cross_entropy(logits, labels, weights)
        losses.append(float(loss.data))
        pred = logits.data.argmax(axis=1)
        correct += int((pred == labels).sum())
        for t, p in zip(labels, pred):
            confusion[t, p] += 1
    return float(np.mean(losses)), correct / len(samples), confusion


def train(cfg):
    """Run the full recipe; returns (best checkpoint path, metrics list)."""
    spec = ARCH_SPECS[cfg.arch]
    samples = datamod.load_manifest(cfg.manifest, cfg.manifest_delimiter)
    split = datamod.split_dataset(
        [s.participant_id for s in samples], cfg.split_seed, cfg.split_sizes
    )
    if split.excluded:
        print(
            f"split excludes {len(split.excluded)} surplus participants: "
            f"{', '.join(split.excluded)}",
            flush=True,
        )
    by_id = {s.participant_id: s for s in samples}
    train_part = [by_id[i] for i in split.train]
    val_part = [by_id[i] for i in split.val]
    # An empty validation split (tiny fixtures) falls back to scoring the
    # train part so early stopping and best-checkpoint logic stay defined.
    monitor_part = val_part if val_part else train_part

    counts = datamod.class_histogram(train_part)
    weights = class_weights(counts)
    vectors, stats = _tabular_vectors(cfg, spec, samples, split.train)

    model = build_model(cfg.arch, cfg.init_seed)
    params = model.parameters()
    adam = AdamState(params, weight_decay=cfg.weight_decay)
    steps_per_epoch = (len(train_part) + cfg.batch_size - 1) // cfg.batch_size
    schedule = OneCycleConfig(total_steps=cfg.max_epochs * steps_per_epoch, max_lr=cfg.max_lr)

    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "best.ckpt")
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    timing_path = os.path.join(cfg.out_dir, "timing.csv")

    meta_common = {
        "seeds": {
            "init": cfg.init_seed,
            "split": cfg.split_seed,
            "shuffle": cfg.shuffle_seed,
        },
        "class_weights": [float(w) for w in weights],
        "class_counts": [int(c) for c in counts],
        "tabular_stats": None
        if stats is None
        else {"mean": list(map(float, stats.mean)), "std": list(map(float, stats.std))},
        "frame_count": cfg.frame_count,
        "frame_size": None if cfg.frame_size is None else list(cfg.frame_size),
        "fit_frames": cfg.fit_frames,
        "batch_size": cfg.batch_size,
        "split_sizes": list(cfg.split_sizes),
        "manifest_delimiter": cfg.manifest_delimiter,
        "tabular_delimiter": cfg.tabular_delimiter,
    }

    history = []
    best_loss = np.inf  # checkpoint tracker: any improvement
    es_best = np.inf  # early-stop tracker: improvements >= min_delta
    bad_epochs = 0
    step = 0
    with open(metrics_path, "w", encoding="utf-8") as mfh, open(
        timing_path, "w", encoding="utf-8"
    ) as tfh:
        mfh.write(METRICS_HEADER + "\n")
        tfh.write("epoch,seconds\n")
        for epoch in range(cfg.max_epochs):
            t_start = time.monotonic()
            batch_losses = []
            for bi, batch in enumerate(
                datamod.batches(train_part, cfg.batch_size, cfg.shuffle_seed, epoch)
            ):
                clip_t, tab_t, labels = _assemble(batch, vectors, cfg)
                try:
                    logits = model.forward(clip_t, tab_t, training=True)
                    loss = weighted_cross_entropy(logits, labels, weights)
                    zero_grads(params)
                    backward(loss)
                except NumericsError as exc:
                    raise NumericsError(f"epoch {epoch}, batch {bi}: {exc}") from exc
                grads = [
                    p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
                ]
                clip_gradients(grads, cfg.clip_value)
                lr = one_cycle_lr(step, schedule)
                adam_step(params, grads, adam, lr)
                step += 1
                batch_losses.append(float(loss.data))

            train_loss = float(np.mean(batch_losses))
            val_loss, val_acc, _ = evaluate_samples(model, monitor_part, vectors, weights, cfg)
            seconds = time.monotonic() - t_start
            m = EpochMetrics(epoch, train_loss, val_loss, val_acc, lr, seconds)
            history.append(m)
            mfh.write(m.csv_row() + "\n")
            mfh.flush()
            tfh.write(f"{epoch},{seconds:.3f}\n")
            tfh.flush()

            if val_loss < best_loss:
                best_loss = val_loss
                meta = dict(meta_common)
                meta["epoch"] = epoch
                meta["best_val_loss"] = float(val_loss)
                meta["best_val_acc"] = float(val_acc)
                save_checkpoint(model, meta, ckpt_path)
            if es_best - val_loss >= cfg.min_delta:
                es_best = val_loss
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    print(
                        f"early stop at epoch {epoch}: no val-loss improvement "
                        f">= {cfg.min_delta} for {cfg.patience} epochs",
                        flush=True,
                    )
                    break
    return ckpt_path, history


def evaluate_checkpoint(model, meta, manifest_path, part, tabular_path=None,
                        manifest_delimiter=None, tabular_delimiter=None):
    """Score a saved model on one split part of a manifest.

    The split, class weights, and tabular standardization all come from the
    checkpoint metadata, so results reproduce the training-time evaluation.
    """
    spec = model.spec
    samples = datamod.load_manifest(
        manifest_path, manifest_delimiter or meta.get("manifest_delimiter", ",")
    )
    seeds = meta.get("seeds") or {}
    split = datamod.split_dataset(
        [s.participant_id for s in samples],
        int(seeds.get("split", 0)),
        meta.get("split_sizes", (63, 8, 9)),
    )
    try:
        ids = split.parts[part]
    except KeyError:
        raise ConfigError(f"unknown split part {part!r}; expected train/val/test") from None
    by_id = {s.participant_id: s for s in samples}
    part_samples = [by_id[i] for i in ids]
    if not part_samples:
        raise DataError(f"split part {part!r} is empty")

    vectors = None
    if spec.uses_tabular:
        if not tabular_path:
            raise ConfigError(f"{spec.arch_id} checkpoints require --tabular for evaluation")
        stats_meta = meta.get("tabular_stats")
        if not stats_meta:
            raise ConfigError("checkpoint lacks tabular normalization statistics")
        stats = datamod.TabularStats(
            mean=np.asarray(stats_meta["mean"], dtype=np.float64),
            std=np.asarray(stats_meta["std"], dtype=np.float64),
        )
        records = datamod.load_tabular(
            tabular_path, tabular_delimiter or meta.get("tabular_delimiter", ",")
        )
        by_rec = {r.participant_id: r for r in records}
        missing = sorted(i for i in ids if i not in by_rec)
        if missing:
            raise DataError(f"tabular file lacks rows for participants {missing}")
        vectors = {i: datamod.standardize(by_rec[i], stats) for i in ids}

    weights = np.asarray(meta.get("class_weights", [1.0, 1.0, 1.0]), dtype=np.float64)
    cfg_like = _EvalView(
        frame_count=int(meta.get("frame_count", 50)),
        frame_size=None if meta.get("frame_size") is None else tuple(meta["frame_size"]),
        fit_frames=bool(meta.get("fit_frames", False)),
        batch_size=int(meta.get("batch_size", 4)),
    )
    return evaluate_samples(model, part_samples, vectors, weights, cfg_like)


@dataclass
class _EvalView:
    frame_count: int
    frame_size: tuple
    fit_frames: bool
    batch_size: int
