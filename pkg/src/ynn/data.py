"""CSV ingestion, normalization, label encoding, deterministic splits, and
the synthetic blob generator used by the smoke/trend harness."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, make_rng

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray          # n x d
    labels: np.ndarray            # n, int class indices
    class_count: int
    feature_names: list[str] | None = None

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class SplitSpec:
    train_fraction: float
    seed: int = 0
    stratified: bool = True

    def validate(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def load_csv(path, feature_columns: list[int], label_column: int,
             has_header: bool = False,
             value_map: dict[str, float] | None = None) -> Dataset:
    """Parse a CSV file into features and first-appearance-encoded labels.

    value_map translates categorical feature cells (e.g. board symbols) to
    numbers before the numeric parse. Rows with features that still fail to
    parse are skipped and reported; a fully empty result is an error.
    """
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    rejected: list[int] = []
    feature_names: list[str] | None = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        for row_number, cells in enumerate(reader):
            if not cells:
                continue
            if row_number == 0 and has_header:
                feature_names = [cells[c] for c in feature_columns
                                 if c < len(cells)]
                continue
            max_col = max(max(feature_columns), label_column)
            needed = max_col + 1 if max_col >= 0 else len(cells)
            if len(cells) < needed:
                rejected.append(row_number)
                continue
            try:
                feats = []
                for c in feature_columns:
                    cell = cells[c].strip()
                    if value_map is not None and cell in value_map:
                        feats.append(float(value_map[cell]))
                    else:
                        feats.append(float(cell))
            except ValueError:
                rejected.append(row_number)
                continue
            rows.append(feats)
            raw_labels.append(cells[label_column].strip())
    if rejected:
        log.warning("%s: rejected %d rows with unparseable features (rows %s%s)",
                    path, len(rejected), rejected[:20],
                    ", ..." if len(rejected) > 20 else "")
    if not rows:
        raise DataFormatError(f"{path}: no parseable rows")

    label_index: dict[str, int] = {}
    labels = []
    for raw in raw_labels:
        if raw not in label_index:
            label_index[raw] = len(label_index)
        labels.append(label_index[raw])
    return Dataset(features=np.asarray(rows, dtype=DTYPE),
                   labels=np.asarray(labels, dtype=np.int64),
                   class_count=len(label_index),
                   feature_names=feature_names)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray


def normalize(ds: Dataset) -> tuple[Dataset, NormalizationStats]:
    """Per-feature z-score (population std); constant features map to zeros."""
    if ds.size < 2:
        raise DataFormatError("normalization needs at least 2 samples")
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    stats = NormalizationStats(mean=mean, std=std)
    return apply_normalization(ds, stats), stats


def apply_normalization(ds: Dataset, stats: NormalizationStats) -> Dataset:
    safe_std = np.where(stats.std == 0.0, 1.0, stats.std)
    feats = (ds.features - stats.mean) / safe_std
    feats[:, stats.std == 0.0] = 0.0
    return Dataset(features=feats, labels=ds.labels.copy(),
                   class_count=ds.class_count, feature_names=ds.feature_names)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the stratified option keeps per-class
    proportions within one sample."""
    spec.validate()
    rng = make_rng(spec.seed)
    if spec.stratified:
        train_idx: list[int] = []
        test_idx: list[int] = []
        for cls in range(ds.class_count):
            members = np.flatnonzero(ds.labels == cls)
            if members.size < 2:
                raise DataFormatError(
                    f"class {cls} has {members.size} sample(s); stratified split needs >= 2")
            members = members[rng.permutation(members.size)]
            n_train = int(round(spec.train_fraction * members.size))
            n_train = min(max(n_train, 1), members.size - 1)
            train_idx.extend(members[:n_train].tolist())
            test_idx.extend(members[n_train:].tolist())
        train_idx = sorted(train_idx)
        test_idx = sorted(test_idx)
    else:
        order = rng.permutation(ds.size)
        n_train = int(round(spec.train_fraction * ds.size))
        n_train = min(max(n_train, 1), ds.size - 1)
        train_idx = order[:n_train].tolist()
        test_idx = order[n_train:].tolist()

    def take(indices):
        idx = np.asarray(indices, dtype=int)
        return Dataset(features=ds.features[idx], labels=ds.labels[idx],
                       class_count=ds.class_count, feature_names=ds.feature_names)

    return take(train_idx), take(test_idx)


def make_blobs(samples: int, classes: int, features: int, seed: int,
               spread: float = 0.5) -> Dataset:
    """Gaussian blobs, one cluster per class, on a seeded circle of centers."""
    if samples < classes or classes < 2 or features < 1:
        raise ValueError("need samples >= classes >= 2 and features >= 1")
    rng = make_rng(seed)
    centers = rng.uniform(-2.0, 2.0, size=(classes, features))
    labels = np.arange(samples, dtype=np.int64) % classes
    points = centers[labels] + rng.normal(0.0, spread, size=(samples, features))
    return Dataset(features=points.astype(DTYPE), labels=labels, class_count=classes)
