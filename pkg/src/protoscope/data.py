"""Labeled datasets: Gaussian blob generator, CSV I/O, stratified subsets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    k: int
    label_map: tuple[str, ...] | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigurationError(f"inputs must be an (n, p) matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ConfigurationError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} inputs")
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")
        if y.size and (y.min() < 0 or y.max() >= self.k):
            raise ConfigurationError(f"labels must lie in [0, {self.k})")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("inputs contain non-finite values")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def per_class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def subset(self, index, note: dict | None = None) -> LabeledDataset:
        index = np.asarray(index, dtype=np.int64)
        prov = dict(self.provenance)
        if note:
            prov.update(note)
        return LabeledDataset(self.inputs[index], self.labels[index], self.k, self.label_map, prov)

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.k)]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _simplex_means(k: int, p: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    # centered one-hot vectors: a regular simplex with edge sqrt(2)
    centered = np.eye(k) - 1.0 / k
    _, _, vt = np.linalg.svd(centered)
    coords = centered @ vt[: k - 1].T * (separation / math.sqrt(2.0))
    means = np.zeros((k, p))
    means[:, : k - 1] = coords
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    rotation = q * np.sign(np.diag(r))
    return means @ rotation.T


def _random_means(k: int, p: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    radius = separation
    for _ in range(10_000):
        dirs = rng.standard_normal((k, p))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = dirs * radius
        d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        if d[np.triu_indices(k, 1)].min() >= separation:
            return means
    raise ConfigurationError(f"could not place {k} means {separation} apart in {p} dimensions")


def gen_blobs(
    k: int, per_class: int, p: int, separation: float = 10.0, spread: float = 0.5, seed: int = 0
) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class.

    Means sit on a regular simplex with edge ``separation`` (randomly rotated)
    when ``k <= p + 1``; otherwise on random directions at radius
    ``separation``, redrawn until every pair is at least ``separation`` apart.
    Rows are grouped by class.
    """
    if k < 2 or per_class < 1 or p < 1:
        raise ConfigurationError(f"need k >= 2, per_class >= 1, p >= 1 (got {k}, {per_class}, {p})")
    if not (separation > 0 and spread > 0):
        raise ConfigurationError("separation and spread must be positive")
    rng = np.random.default_rng(seed)
    if k <= p + 1:
        means = _simplex_means(k, p, separation, rng)
    else:
        means = _random_means(k, p, separation, rng)
    x = np.concatenate([m + spread * rng.standard_normal((per_class, p)) for m in means])
    y = np.repeat(np.arange(k), per_class)
    prov = {
        "generator": "blobs",
        "k": k,
        "per_class": per_class,
        "p": p,
        "separation": separation,
        "spread": spread,
        "seed": seed,
    }
    return LabeledDataset(x, y, k, provenance=prov)


def _label_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_csv(path, header: bool = False, label_map=None) -> LabeledDataset:
    """Read rows of ``label,f1,...,fp``.

    Labels are remapped to 0..k-1 in sorted order (numeric when every label
    parses as a number); the original labels are kept in ``label_map``. When
    ``label_map`` is passed in, labels must come from it and keep its indices,
    which is how a held-out file is read consistently with its training file.
    """
    path = Path(path)
    raw_labels: list[str] = []
    rows: list[list[float]] = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("expected a label and at least one feature", lineno)
            if width is None:
                width = len(row) - 1
            elif len(row) - 1 != width:
                raise ParseError(f"expected {width} features, found {len(row) - 1}", lineno)
            try:
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature: {exc}", lineno) from exc
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature value", lineno)
            label = row[0].strip()
            if not label:
                raise ParseError("empty label", lineno)
            if label_map is not None and label not in label_map:
                raise ParseError(f"label {label!r} not in the known label set", lineno)
            raw_labels.append(label)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if label_map is None:
        label_map = tuple(sorted(set(raw_labels), key=_label_sort_key))
    else:
        label_map = tuple(label_map)
    if len(label_map) < 2:
        raise ParseError(f"{path}: need at least two distinct labels")
    index = {lab: i for i, lab in enumerate(label_map)}
    y = np.array([index[lab] for lab in raw_labels], dtype=np.int64)
    return LabeledDataset(
        np.array(rows), y, len(label_map), label_map, provenance={"source": str(path)}
    )


def write_csv(ds: LabeledDataset, path) -> None:
    """Write ``label,f1,...,fp`` rows (labels as original names when known)."""
    names = ds.label_map or tuple(str(i) for i in range(ds.k))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([names[y], *(repr(float(v)) for v in x)])


def partition_fraction(ds: LabeledDataset, fraction: float, seed: int = 0) -> LabeledDataset:
    """Keep ``round(fraction * n_l)`` random examples of every class.

    Selected rows keep their original relative order, so fraction 1.0 returns
    the dataset unchanged.
    """
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    keep = []
    for c, idx in enumerate(ds.class_indices()):
        if idx.size == 0:
            continue
        m = round_half_up(fraction * idx.size)
        if m == 0:
            raise ConfigurationError(f"fraction {fraction} leaves class {c} empty")
        keep.append(rng.choice(idx, size=m, replace=False))
    return ds.subset(np.sort(np.concatenate(keep)), {"fraction": fraction, "fraction_seed": seed})


def split_train_test(
    ds: LabeledDataset, test_fraction: float, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified disjoint split; every class keeps at least one row on each side."""
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test = []
    for c, idx in enumerate(ds.class_indices()):
        if idx.size == 0:
            continue
        m = round_half_up(test_fraction * idx.size)
        if m < 1 or m > idx.size - 1:
            raise ConfigurationError(
                f"class {c} with {idx.size} examples cannot be split at test_fraction {test_fraction}"
            )
        test.append(rng.choice(idx, size=m, replace=False))
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(ds.n), test_idx)
    note = {"test_fraction": test_fraction, "split_seed": seed}
    return ds.subset(train_idx, {**note, "split": "train"}), ds.subset(test_idx, {**note, "split": "test"})
