#!/usr/bin/env python3
"""
Dataset Factory
Two-moons generation, stratified splitting, synthetic k-level confidence channels,
regional label-noise sets and CSV ingestion
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.datasets import make_moons

from lab_errors import ContractViolation, CsvParseError

logger = logging.getLogger(__name__)

DEFAULT_TWO_MOONS_N = 1900
DEFAULT_SPLIT = (1050, 400, 450)
DEFAULT_NOISE = 0.25


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels and a name"""
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ContractViolation(f"dataset {self.name!r}: features must be 2-D, got shape {list(features.shape)}")
        if features.shape[0] != labels.shape[0]:
            raise ContractViolation(f"dataset {self.name!r}: {features.shape[0]} rows but {labels.shape[0]} labels")
        if not np.all(np.isfinite(features)):
            raise ContractViolation(f"dataset {self.name!r}: features contain NaN/Inf")
        if labels.size and labels.min() < 0:
            raise ContractViolation(f"dataset {self.name!r}: labels must be nonnegative")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    def subset(self, index: np.ndarray, name: Optional[str] = None) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], name or self.name)

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def make_two_moons(n: int = DEFAULT_TWO_MOONS_N, noise: float = DEFAULT_NOISE, seed: int = 42) -> Dataset:
    """Two interleaving half circles, class 0 on the upper unit half circle, class 1 offset by (1, -0.5)"""
    if n < 2:
        raise ContractViolation(f"make_two_moons: n must be >= 2, got {n}")
    if noise < 0:
        raise ContractViolation(f"make_two_moons: noise must be >= 0, got {noise}")
    n_upper = n // 2
    features, labels = make_moons(n_samples=(n_upper, n - n_upper), shuffle=True, noise=noise or None,
                                  random_state=seed)
    return Dataset(features, labels, name="two_moons")


def stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Shuffle so every class is spread evenly along the ordering

    Rows of a class are shuffled, then placed at evenly spaced keys
    (rank + u) / count with u uniform; sorting the keys interleaves the classes,
    so any contiguous slice holds each class within about two rows of its share.
    """
    keys = np.empty(labels.shape[0])
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        keys[members] = (np.arange(members.size) + rng.random(members.size)) / members.size
    return np.argsort(keys, kind="stable")


def split(ds: Dataset, sizes: Tuple[int, int, int] = DEFAULT_SPLIT, seed: int = 42) -> Tuple[Dataset, Dataset, Dataset]:
    """Seeded stratified shuffle then contiguous slicing into (train, val, test)"""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ContractViolation(f"split: sizes must be three nonnegative ints, got {sizes}")
    if sum(sizes) > ds.n:
        raise ContractViolation(f"split: sizes {sizes} sum to {sum(sizes)} > n={ds.n}")

    order = stratified_order(ds.labels, np.random.default_rng(seed))
    bounds = np.cumsum((0,) + sizes)
    result = tuple(ds.subset(order[bounds[j]:bounds[j + 1]], name=f"{ds.name}/{part}")
                   for j, part in enumerate(("train", "val", "test")))
    logger.debug(f"split {ds.name}: {[r.n for r in result]} (classes {[r.class_counts() for r in result]})")
    return result


@dataclass(frozen=True)
class ConfidenceChannel:
    """k true confidence levels, level weights and (level index, outcome) samples"""
    levels: np.ndarray
    weights: np.ndarray
    level_index: np.ndarray
    outcomes: np.ndarray

    def empirical_rates(self) -> np.ndarray:
        rates = np.full(self.levels.shape, np.nan)
        for i in range(len(self.levels)):
            hits = self.outcomes[self.level_index == i]
            if hits.size:
                rates[i] = hits.mean()
        return rates


def make_channel(k: int, n: int, spacing: Union[str, Sequence[float]] = "uniform", seed: int = 0,
                 weights: Optional[Sequence[float]] = None) -> ConfidenceChannel:
    """Draw a level by weight, then an outcome ~ Bernoulli(level)"""
    if k < 1 or n < 1:
        raise ContractViolation(f"make_channel: need k >= 1 and n >= 1, got k={k}, n={n}")
    if isinstance(spacing, str):
        if spacing != "uniform":
            raise ContractViolation(f"make_channel: unknown spacing {spacing!r}")
        levels = (np.arange(k) + 0.5) / k
    else:
        levels = np.asarray(spacing, dtype=np.float64)
        if levels.shape != (k,):
            raise ContractViolation(f"make_channel: expected {k} custom levels, got {levels.size}")
        if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
            raise ContractViolation("make_channel: custom levels must be strictly increasing inside (0, 1)")
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ContractViolation("make_channel: weights must be a probability vector over the levels")

    rng = np.random.default_rng(seed)
    level_index = rng.choice(k, size=n, p=w)
    outcomes = (rng.random(n) < levels[level_index]).astype(np.int64)
    return ConfidenceChannel(levels, w, level_index, outcomes)


@dataclass(frozen=True)
class RegionalNoiseData:
    """Blob regions whose labels are kept with probability keep_probs[region]"""
    dataset: Dataset
    region_ids: np.ndarray
    keep_probs: np.ndarray
    centers: np.ndarray = field(repr=False)

    @property
    def injected_variance(self) -> np.ndarray:
        """Bernoulli label variance p(1 - p) per region"""
        return self.keep_probs * (1.0 - self.keep_probs)


def make_regional_noise(n_per_region: int = 300, keep_probs: Sequence[float] = (1.0, 0.9, 0.75, 0.5),
                        seed: int = 0, spread: float = 0.35) -> RegionalNoiseData:
    """
    Well-separated Gaussian blobs along the first axis

    Inside a blob the clean label is 1 right of the blob centre and 0 left of it;
    each label is then kept with the region's probability and flipped otherwise.
    """
    keep = np.asarray(keep_probs, dtype=np.float64)
    if keep.ndim != 1 or keep.size < 1 or np.any(keep < 0) or np.any(keep > 1) or n_per_region < 2:
        raise ContractViolation("make_regional_noise: keep_probs must lie in [0, 1] and n_per_region >= 2")
    rng = np.random.default_rng(seed)
    centers = np.stack([np.arange(keep.size) * 4.0, np.zeros(keep.size)], axis=1)
    features, labels, regions = [], [], []
    for r, center in enumerate(centers):
        points = center + rng.normal(0.0, spread, size=(n_per_region, 2))
        clean = (points[:, 0] > center[0]).astype(np.int64)
        flip = rng.random(n_per_region) >= keep[r]
        features.append(points)
        labels.append(np.where(flip, 1 - clean, clean))
        regions.append(np.full(n_per_region, r))
    ds = Dataset(np.vstack(features), np.concatenate(labels), name="regional_noise")
    return RegionalNoiseData(ds, np.concatenate(regions), keep, centers)


def make_quadrant_domains(ds: Dataset) -> Dict[str, Dataset]:
    """Four domains from the signs of the first two centred features"""
    if ds.d < 2:
        raise ContractViolation("make_quadrant_domains: needs at least two feature columns")
    centred = ds.features[:, :2] - ds.features[:, :2].mean(axis=0)
    quadrant = (centred[:, 0] >= 0).astype(int) + 2 * (centred[:, 1] >= 0).astype(int)
    domains = {}
    for q in range(4):
        index = np.flatnonzero(quadrant == q)
        if index.size:
            domains[f"q{q}"] = ds.subset(index, name=f"{ds.name}/q{q}")
    return domains


# CSV ingestion

def load_csv(path: Union[str, Path], label_column: Union[str, int] = -1) -> Dataset:
    """
    Parse a headered, comma-delimited UTF-8 file (no quoting)

    Raises:
        FileNotFoundError: missing file
        CsvParseError: non-numeric feature cell or non-integer label
        ContractViolation: labels that do not cover 0..K-1
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    # Row numbers are physical line numbers minus one, so data row 1 sits right
    # under a header on line 1; blank lines are skipped but still counted
    with open(path, "r", encoding="utf-8") as f:
        lines = [(number, line.rstrip("\r\n")) for number, line in enumerate(f) if line.strip()]
    if not lines:
        raise ContractViolation(f"{path}: empty file, a header row is required")

    header = [h.strip() for h in lines[0][1].split(",")]
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise ContractViolation(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column) % len(header)

    features, labels = [], []
    for row_number, line in lines[1:]:
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise CsvParseError(f"expected {len(header)} cells, found {len(cells)}", row_number, "*")
        row = []
        for j, cell in enumerate(cells):
            if j == label_idx:
                try:
                    value = float(cell)
                except ValueError:
                    raise CsvParseError(f"label {cell!r} is not numeric", row_number, header[j]) from None
                if not value.is_integer():
                    raise CsvParseError(f"label {cell!r} is not an integer", row_number, header[j])
                labels.append(int(value))
                continue
            try:
                row.append(float(cell))
            except ValueError:
                raise CsvParseError(f"feature {cell!r} is not numeric", row_number, header[j]) from None
        features.append(row)

    label_array = np.asarray(labels, dtype=np.int64)
    present = np.unique(label_array)
    if present.size and not np.array_equal(present, np.arange(present.max() + 1)):
        raise ContractViolation(f"{path}: labels {present.tolist()} leave gaps in 0..K-1")
    ds = Dataset(np.asarray(features, dtype=np.float64).reshape(len(features), len(header) - 1),
                 label_array, name=path.stem)
    logger.info(f"loaded {path}: n={ds.n}, d={ds.d}, K={ds.num_classes}")
    return ds


def dump_csv(ds: Dataset, path: Union[str, Path], label_name: str = "label") -> Path:
    """Write the dataset in the load_csv schema (features x0..x{d-1}, label last)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{j}" for j in range(ds.d)] + [label_name]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row, label in zip(ds.features, ds.labels):
            f.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
    return path
