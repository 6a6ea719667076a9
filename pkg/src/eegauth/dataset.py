"""Instance store, balanced per-user dataset assembly, and stratified CV splits.

A user's dataset pairs their own segments (genuine) with an equal number of
segments sampled without replacement from every other subject (impostor).
Sampling is order-independent: the pool is sorted canonically before the
seeded draw, so ingestion order never changes the result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ContaminationError,
    InsufficientPoolError,
    ParseError,
    SplitError,
    ValidationError,
)
from .features import FEATURE_NAMES, N_FEATURES

LABEL_GENUINE = "genuine"
LABEL_IMPOSTOR = "impostor"
LABEL_UNLABELED = "unlabeled"
_LABELS = (LABEL_GENUINE, LABEL_IMPOSTOR, LABEL_UNLABELED)

FEATURES_HEADER = ("subject", "segment_index", "label") + FEATURE_NAMES


@dataclass(frozen=True)
class Instance:
    """One labeled feature vector traced back to its source segment."""

    features: np.ndarray
    label: str
    source_subject: str
    segment_index: int

    def __post_init__(self):
        values = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", values)
        if values.shape != (N_FEATURES,):
            raise ValidationError(f"feature vector must have {N_FEATURES} values")
        if not np.isfinite(values).all():
            raise ValidationError("feature vector contains non-finite values")
        if (values < 0).any():
            bad = FEATURE_NAMES[int(np.argmin(values))]
            raise ValidationError(f"negative band power in feature {bad}")
        if self.label not in _LABELS:
            raise ValidationError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class UserDataset:
    owner: str
    instances: tuple[Instance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        genuine = [i for i in self.instances if i.label == LABEL_GENUINE]
        impostor = [i for i in self.instances if i.label == LABEL_IMPOSTOR]
        if len(genuine) + len(impostor) != len(self.instances):
            raise ValidationError("dataset instances must be genuine or impostor")
        if len(genuine) != len(impostor):
            raise ValidationError(
                f"class counts differ: {len(genuine)} genuine, {len(impostor)} impostor"
            )
        for inst in genuine:
            if inst.source_subject != self.owner:
                raise ValidationError("genuine instance not owned by dataset owner")
        for inst in impostor:
            if inst.source_subject == self.owner:
                raise ContaminationError("impostor instance owned by dataset owner")
        keys = [(i.source_subject, i.segment_index) for i in impostor]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate impostor instance")

    @property
    def n_per_class(self) -> int:
        return len(self.instances) // 2

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) with y == 1 for genuine rows."""
        X = np.stack([i.features for i in self.instances])
        y = np.array([1.0 if i.label == LABEL_GENUINE else 0.0 for i in self.instances])
        return X, y


@dataclass(frozen=True)
class CvSplit:
    """k folds of instance indices; folds partition the dataset."""

    folds: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "folds",
                           tuple(np.asarray(f, dtype=int) for f in self.folds))

    @property
    def k(self) -> int:
        return len(self.folds)


def assemble_user_dataset(owner: str, own_instances, pool, seed: int) -> UserDataset:
    """Balanced dataset: the owner's instances plus an equal-size impostor draw.

    The impostor sample is uniform without replacement from the pool after
    canonical (subject, segment_index) ordering, so the same seed yields the
    same dataset regardless of pool ordering.
    """
    own = [replace(i, label=LABEL_GENUINE) for i in own_instances]
    if not own:
        raise ValidationError("owner has no instances")
    for inst in own:
        if inst.source_subject != owner:
            raise ValidationError(
                f"own instance sourced from {inst.source_subject}, not {owner}"
            )
    pool = list(pool)
    for inst in pool:
        if inst.source_subject == owner:
            raise ContaminationError(f"pool contains instances of {owner}")
    n = len(own)
    if len(pool) < n:
        raise InsufficientPoolError(f"pool has {len(pool)} instances, need {n}")
    pool.sort(key=lambda i: (i.source_subject, i.segment_index))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=n, replace=False)
    impostors = [replace(pool[int(j)], label=LABEL_IMPOSTOR) for j in sorted(chosen)]
    return UserDataset(owner, tuple(own + impostors))


def dataset_manifest(ds: UserDataset, seed: int) -> dict:
    """Audit record of an assembled dataset: owner, seed, impostor provenance."""
    sources = sorted({i.source_subject for i in ds.instances
                      if i.label == LABEL_IMPOSTOR})
    return {"owner": ds.owner, "seed": int(seed), "impostor_sources": sources}


def stratified_kfold(ds: UserDataset, k: int, seed: int) -> CvSplit:
    """Seeded stratified folds with per-fold class counts within +-1."""
    labels = np.array([i.label for i in ds.instances])
    counts = [int((labels == lab).sum()) for lab in (LABEL_GENUINE, LABEL_IMPOSTOR)]
    if k < 2 or k > min(counts):
        raise SplitError(f"k={k} invalid for class counts {counts}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for lab in (LABEL_GENUINE, LABEL_IMPOSTOR):
        idx = np.flatnonzero(labels == lab)
        rng.shuffle(idx)
        for fi, chunk in enumerate(np.array_split(idx, k)):
            folds[fi].extend(chunk.tolist())
    return CvSplit(tuple(np.sort(np.asarray(f)) for f in folds))


# --- feature CSV I/O ----------------------------------------------------------

def save_features_csv(instances, path) -> None:
    """Lossless feature CSV (17 significant digits per value)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURES_HEADER)
        for inst in instances:
            writer.writerow(
                [inst.source_subject, inst.segment_index, inst.label]
                + [f"{v:.17g}" for v in inst.features]
            )


def load_features_csv(path) -> list[Instance]:
    path = Path(path)
    instances = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        if tuple(header) != FEATURES_HEADER:
            missing = [c for c in FEATURES_HEADER if c not in header]
            if missing:
                raise ParseError(f"{path}: header missing column {missing[0]}")
            raise ParseError(f"{path}: unexpected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(FEATURES_HEADER):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(FEATURES_HEADER)} fields, got {len(row)}"
                )
            try:
                values = np.array([float(v) for v in row[3:]], dtype=float)
                instance = Instance(values, row[2], row[0], int(row[1]))
            except (ValueError, ValidationError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            instances.append(instance)
    return instances
