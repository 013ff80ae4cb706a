"""Shared fixtures: a synthetic motion corpus and manifest builders.

The corpus holds 8 grayscale clips (16 frames of 64x80) with class-distinct
motion: a bright blob that translates steadily (progressive), oscillates in
place (non progressive), or stays still (immotile).
"""

import csv
import os

import numpy as np
import pytest

from motility3d import netpbm
from motility3d.data import FEATURE_COLUMNS, MANIFEST_COLUMNS

FRAME_SHAPE = (64, 80)
FRAME_COUNT = 16

# participant -> class: 3 progressive, 3 non progressive, 2 immotile
CORPUS_CLASSES = {
    "P01": 0, "P02": 0, "P03": 0,
    "P04": 1, "P05": 1, "P06": 1,
    "P07": 2, "P08": 2,
}
MOTILITY_ROWS = {
    0: ("80", "10", "10"),
    1: ("10", "80", "10"),
    2: ("5", "10", "85"),
}


def blob_frame(cx, cy, sigma, amp, shape=FRAME_SHAPE):
    h, w = shape
    y = np.arange(h, dtype=np.float64)[:, None]
    x = np.arange(w, dtype=np.float64)[None, :]
    img = amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma ** 2))
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


def render_clip(class_id, rng, frames=FRAME_COUNT, shape=FRAME_SHAPE):
    h, w = shape
    cy = rng.uniform(0.3 * h, 0.7 * h)
    sigma = rng.uniform(3.0, 5.0)
    amp = rng.uniform(200.0, 255.0)
    if class_id == 0:
        x0 = rng.uniform(0.05 * w, 0.15 * w)
        dx = (0.85 * w - x0) / (frames - 1)
        xs = [x0 + dx * i for i in range(frames)]
    elif class_id == 1:
        xc = rng.uniform(0.40 * w, 0.60 * w)
        span = rng.uniform(0.15 * w, 0.25 * w)
        xs = [xc + span * np.sin(2.0 * np.pi * i / (frames / 2.0)) for i in range(frames)]
    else:
        xc = rng.uniform(0.30 * w, 0.70 * w)
        xs = [xc] * frames
    return [blob_frame(x, cy, sigma, amp, shape) for x in xs]


def write_corpus(root, frame_count=FRAME_COUNT, shape=FRAME_SHAPE, with_tabular=True):
    """Materialize the 8-clip corpus under ``root``; returns manifest path."""
    rng = np.random.default_rng(2024)
    rows = []
    for pid in sorted(CORPUS_CLASSES):
        cls = CORPUS_CLASSES[pid]
        frames_dir = os.path.join(root, "frames", pid)
        os.makedirs(frames_dir, exist_ok=True)
        for i, frame in enumerate(render_clip(cls, rng, frame_count, shape)):
            netpbm.write_pgm(os.path.join(frames_dir, f"frame_{i:05d}.pgm"), frame)
        rows.append((pid, os.path.join("frames", pid)) + MOTILITY_ROWS[cls])
    manifest = os.path.join(root, "manifest.csv")
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    if with_tabular:
        with open(os.path.join(root, "tabular.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("participant_id",) + FEATURE_COLUMNS)
            for pid in sorted(CORPUS_CLASSES):
                vals = rng.normal(0.0, 1.0, size=len(FEATURE_COLUMNS))
                writer.writerow([pid] + [f"{v:.4f}" for v in vals])
    return manifest


ACCEPTANCE_LINES = []


class AcceptanceReport:
    """Collects one pass/fail line per acceptance criterion; the lines are
    echoed in the terminal summary so they survive output capture."""

    def record(self, number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = write_corpus(str(root))
    return {
        "root": str(root),
        "manifest": manifest,
        "tabular": os.path.join(str(root), "tabular.csv"),
    }


@pytest.fixture(scope="session")
def histogram_manifest(tmp_path_factory):
    """85 rows with exact class counts 52/9/24; frame dirs are placeholders."""
    root = tmp_path_factory.mktemp("hist")
    path = os.path.join(str(root), "manifest.csv")
    counts = (52, 9, 24)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        n = 0
        for cls, count in enumerate(counts):
            for _ in range(count):
                n += 1
                writer.writerow((f"V{n:03d}", f"frames/V{n:03d}") + MOTILITY_ROWS[cls])
    return path
