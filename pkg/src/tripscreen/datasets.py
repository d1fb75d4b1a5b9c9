"""Dataset ingestion and generation.

Two on-disk formats are supported:

* sparse index:value text, one sample per line, leading integer label,
  1-based feature indices (the common SVM-tools layout);
* dense CSV with one label column (no header needed; a single header row is
  tolerated and skipped).

Features are taken as-is; no scaling is applied.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .problem import Dataset


class DatasetFormatError(ValueError):
    """Raised for malformed input files; message carries the line number."""


def load_dataset(path, fmt: str = "auto", label_col: int = 0,
                 n_features: Optional[int] = None) -> Dataset:
    path = Path(path)
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "libsvm"
    if fmt == "libsvm":
        return load_libsvm(path, n_features=n_features)
    if fmt == "csv":
        return load_csv(path, label_col=label_col)
    raise ValueError(f"unknown dataset format {fmt!r}")


def load_libsvm(path, n_features: Optional[int] = None) -> Dataset:
    rows = []
    labels = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: label {parts[0]!r} is not numeric")
            entries = []
            for token in parts[1:]:
                try:
                    idx_s, val_s = token.split(":", 1)
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: malformed feature {token!r}")
                if idx < 1:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: feature index {idx} is not 1-based")
                entries.append((idx, val))
                max_index = max(max_index, idx)
            rows.append(entries)
            labels.append(label)
    if not rows:
        raise DatasetFormatError(f"{path}: no samples found")
    d = n_features if n_features is not None else max_index
    if max_index > d:
        raise DatasetFormatError(
            f"{path}: feature index {max_index} exceeds declared dimension {d}")
    features = np.zeros((len(rows), d))
    for r, entries in enumerate(rows):
        for idx, val in entries:
            features[r, idx - 1] = val
    return Dataset(features=features, labels=_codes(np.array(labels)))


def save_libsvm(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row, label in zip(dataset.features, dataset.labels):
            toks = [str(int(label))]
            toks += [f"{k + 1}:{v:.17g}" for k, v in enumerate(row) if v != 0.0]
            handle.write(" ".join(toks) + "\n")


def load_csv(path, label_col: int = 0) -> Dataset:
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for lineno, rec in enumerate(reader, start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            try:
                vals = [float(tok) for tok in rec]
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise DatasetFormatError(
                    f"{path}:{lineno}: non-numeric value in row")
            if width is None:
                width = len(vals)
                if not 0 <= label_col < width:
                    raise DatasetFormatError(
                        f"{path}: label column {label_col} out of range")
            elif len(vals) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
            labels.append(vals[label_col])
            rows.append([v for k, v in enumerate(vals) if k != label_col])
    if not rows:
        raise DatasetFormatError(f"{path}: no samples found")
    return Dataset(features=np.array(rows), labels=_codes(np.array(labels)))


def save_csv(dataset: Dataset, path, label_col: int = 0) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        for row, label in zip(dataset.features, dataset.labels):
            rec = [f"{v:.17g}" for v in row]
            rec.insert(label_col, str(int(label)))
            writer.writerow(rec)


def _codes(raw: np.ndarray) -> np.ndarray:
    values = np.unique(raw)
    lookup = {v: k for k, v in enumerate(values)}
    # Keep integer-valued labels as they are so a written file reads back
    # identically; only non-integer labels are re-coded.
    if np.allclose(values, np.round(values)):
        return raw.astype(np.int64)
    return np.array([lookup[v] for v in raw], dtype=np.int64)


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Random subsample of the given fraction of rows (without replacement)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n = dataset.n_samples
    keep = rng.choice(n, size=max(2, int(round(fraction * n))), replace=False)
    keep.sort()
    return Dataset(features=dataset.features[keep], labels=dataset.labels[keep])


def gaussian_blobs(n_samples: int, n_features: int, n_classes: int = 2,
                   separation: float = 2.0, seed: int = 0,
                   label_noise: float = 0.0) -> Dataset:
    """Balanced Gaussian class clusters for synthetic experiments.

    ``label_noise`` reassigns that fraction of labels at random, which makes
    the triplet loss irreducible: useful when an experiment needs the loss
    curve to flatten at a positive level instead of decaying to zero.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=separation, size=(n_classes, n_features))
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    features = means[labels] + rng.standard_normal((n_samples, n_features))
    if label_noise > 0.0:
        flip = rng.random(n_samples) < label_noise
        labels = labels.copy()
        labels[flip] = rng.integers(0, n_classes, size=int(flip.sum()))
    return Dataset(features=features, labels=labels)
