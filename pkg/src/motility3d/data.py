"""Data pipeline: sample manifests, class labels, seeded splits, frame-clip
loading, tabular CSV ingestion with train-only standardization, and
deterministic batch ordering.

Frames are ingested as image files (binary PGM/PPM named ``frame_%05d``);
video decoding is delegated to an external tool. Labels derive from the
manifest's three motility percentages by argmax (ties to the lowest index),
the only rule consistent with one label per participant; it is a documented
choice, not stated by the data source.
"""

import csv
import os
import re
from dataclasses import dataclass

import numpy as np

from . import netpbm
from .errors import (
    DataError,
    DegenerateFeatureError,
    InconsistentFramesError,
    InsufficientFramesError,
    SchemaError,
    TabularParseError,
)

MANIFEST_COLUMNS = ("participant_id", "frames_dir", "progressive", "non_progressive", "immotile")

FEATURE_COLUMNS = (
    "Seminal plasma anti-Müllerian hormone",
    "Serum total testosterone",
    "Serum oestradiol",
    "Serum sex hormone-binding globulin",
    "Serum follicle-stimulating hormone",
    "Serum Luteinizing hormone",
    "Serum inhibin B",
    "Serum anti-Müllerian hormone",
    "Abstinence time",
    "Body mass index",
    "Age",
    "Sperm concentration",
    "Ejaculate volume",
    "Sperm vitality",
    "Normal spermatozoa",
    "Head defects",
    "Midpiece and neck defects",
    "Tail defects",
    "Teratozoospermia index",
)

_FRAME_NAME = re.compile(r"^frame_(\d{5})\.(pgm|ppm)$")


@dataclass(frozen=True)
class LabeledSample:
    participant_id: str
    frames_dir: str
    motility: tuple
    label: int


@dataclass(frozen=True)
class TabularRecord:
    participant_id: str
    values: np.ndarray  # float64, length 19; imputed entries hold nan
    missing: np.ndarray  # bool, length 19


@dataclass(frozen=True)
class TabularStats:
    mean: np.ndarray
    std: np.ndarray  # population std, floored at 1e-8


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    excluded: tuple
    seed: int

    @property
    def parts(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def derive_label(motility):
    """argmax over (progressive, non_progressive, immotile); ties break low."""
    return int(np.argmax(np.asarray(motility, dtype=np.float64)))


def load_manifest(path, delimiter=","):
    """Read and validate the sample manifest; frames_dir entries are
    resolved relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty manifest") from None
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise SchemaError(
                f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}"
            )
        samples = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise SchemaError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            pid = row[0].strip()
            if not pid:
                raise SchemaError(f"{path}:{lineno}: empty participant_id")
            if pid in seen:
                raise SchemaError(f"{path}:{lineno}: duplicate participant_id {pid!r}")
            seen.add(pid)
            try:
                motility = tuple(float(v) for v in row[2:5])
            except ValueError:
                raise SchemaError(
                    f"{path}:{lineno}: non-numeric motility percentages {row[2:5]}"
                ) from None
            if any(not 0 <= m <= 100 for m in motility):
                raise SchemaError(
                    f"{path}:{lineno}: motility percentages must lie in [0,100]"
                )
            if not 99 <= sum(motility) <= 101:
                raise SchemaError(
                    f"{path}:{lineno}: motility percentages sum to {sum(motility):g}, "
                    "expected ~100"
                )
            frames_dir = row[1].strip()
            if not os.path.isabs(frames_dir):
                frames_dir = os.path.join(base, frames_dir)
            samples.append(LabeledSample(pid, frames_dir, motility, derive_label(motility)))
    if not samples:
        raise SchemaError(f"{path}: manifest has no samples")
    return samples


def split_dataset(ids, seed, sizes=(63, 8, 9)):
    """Deterministic seeded split: shuffle sorted ids, assign contiguous
    train/val/test runs, report any surplus ids as excluded."""
    n_train, n_val, n_test = (int(s) for s in sizes)
    if n_train < 1 or n_val < 0 or n_test < 0:
        raise DataError(f"invalid split sizes {sizes}")
    ids = sorted(ids)
    need = n_train + n_val + n_test
    if len(ids) < need:
        raise DataError(f"need at least {need} ids for split sizes {sizes}, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    return DatasetSplit(
        train=tuple(order[:n_train]),
        val=tuple(order[n_train : n_train + n_val]),
        test=tuple(order[n_train + n_val : need]),
        excluded=tuple(sorted(order[need:])),
        seed=int(seed),
    )


def list_frames(frames_dir):
    if not os.path.isdir(frames_dir):
        raise DataError(f"frames directory not found: {frames_dir}")
    names = sorted(n for n in os.listdir(frames_dir) if _FRAME_NAME.match(n))
    return [os.path.join(frames_dir, n) for n in names]


def _fit_frame(frame, target):
    th, tw = target
    h, w = frame.shape
    # Center-crop what exceeds the target, zero-pad (letterbox) what falls short.
    if h > th:
        top = (h - th) // 2
        frame = frame[top : top + th]
    if w > tw:
        left = (w - tw) // 2
        frame = frame[:, left : left + tw]
    h, w = frame.shape
    if h < th or w < tw:
        out = np.zeros((th, tw), dtype=frame.dtype)
        top, left = (th - h) // 2, (tw - w) // 2
        out[top : top + h, left : left + w] = frame
        frame = out
    return frame


def load_clip(frames_dir, frame_count=50, frame_size=None, fit=False):
    """Load the first ``frame_count`` frames as a (1, frame_count, H, W)
    float32 array with values in [0, 1].

    With ``frame_size`` the frames must match (H, W) exactly, unless
    ``fit`` is set, which center-crops/letterboxes them to that size.
    """
    paths = list_frames(frames_dir)
    if len(paths) < frame_count:
        raise InsufficientFramesError(
            f"{frames_dir}: found {len(paths)} frames, need {frame_count}"
        )
    frames = []
    shape = None
    for p in paths[:frame_count]:
        frame = netpbm.read_frame(p)
        if frame_size is not None:
            target = (int(frame_size[0]), int(frame_size[1]))
            if fit:
                frame = _fit_frame(frame, target)
            elif frame.shape != target:
                raise InconsistentFramesError(
                    f"{p}: frame is {frame.shape[0]}x{frame.shape[1]}, "
                    f"expected {target[0]}x{target[1]}"
                )
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise InconsistentFramesError(
                f"{p}: frame is {frame.shape[0]}x{frame.shape[1]}, "
                f"others are {shape[0]}x{shape[1]}"
            )
        frames.append(frame)
    return np.stack(frames)[np.newaxis]


def load_tabular(path, delimiter=","):
    """Parse the clinical CSV into TabularRecords (raw values, no scaling).

    The header must contain a participant_id column and all 19 feature
    columns; empty cells are recorded as missing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty tabular file") from None
        positions = {}
        for col in ("participant_id",) + FEATURE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
            positions[col] = header.index(col)
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            pid = row[positions["participant_id"]].strip()
            if not pid:
                raise SchemaError(f"{path}:{lineno}: empty participant_id")
            if pid in seen:
                raise SchemaError(f"{path}:{lineno}: duplicate participant_id {pid!r}")
            seen.add(pid)
            values = np.full(len(FEATURE_COLUMNS), np.nan)
            missing = np.zeros(len(FEATURE_COLUMNS), dtype=bool)
            for j, col in enumerate(FEATURE_COLUMNS):
                cell = row[positions[col]].strip() if positions[col] < len(row) else ""
                if not cell:
                    missing[j] = True
                    continue
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise TabularParseError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {col!r}"
                    ) from None
            records.append(TabularRecord(pid, values, missing))
    return records


def fit_standardizer(records, train_ids):
    """Per-feature mean and population std over the training rows only."""
    train_ids = set(train_ids)
    rows = [r for r in records if r.participant_id in train_ids]
    if not rows:
        raise DataError("no tabular records match the training split")
    k = len(FEATURE_COLUMNS)
    mean = np.zeros(k)
    std = np.zeros(k)
    for j in range(k):
        col = np.array([r.values[j] for r in rows if not r.missing[j]])
        if col.size == 0:
            raise DegenerateFeatureError(
                f"feature {FEATURE_COLUMNS[j]!r} is missing from every training row"
            )
        mean[j] = col.mean()
        std[j] = max(float(col.std()), 1e-8)
    return TabularStats(mean=mean, std=std)


def standardize(record, stats):
    """z-score one record; missing values impute to the train mean (z = 0)."""
    z = (record.values - stats.mean) / stats.std
    z[record.missing] = 0.0
    return z.astype(np.float32)


def batches(samples, batch_size, shuffle_seed, epoch):
    """Deterministic per-epoch batching: shuffle keyed by (shuffle_seed,
    epoch), contiguous chunks, final partial batch retained."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if not samples:
        raise DataError("cannot batch an empty split part")
    rng = np.random.default_rng(np.random.SeedSequence([int(shuffle_seed), int(epoch)]))
    order = rng.permutation(len(samples))
    return [
        [samples[i] for i in order[start : start + batch_size]]
        for start in range(0, len(samples), batch_size)
    ]


def class_histogram(samples, num_classes=3):
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        counts[s.label] += 1
    return counts
