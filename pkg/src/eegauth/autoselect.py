"""Time-budgeted combined algorithm + hyperparameter selection.

The search scores seeded configuration draws by stratified k-fold CV accuracy:
first one default configuration per algorithm, then random draws.  No new
evaluation starts after the wall-clock deadline, and a running evaluation
aborts between folds once the deadline passes, so total time never exceeds
the budget plus a fraction of one evaluation.  The best configuration is
retrained on the full dataset and returned with its CV score attached.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import classifiers
from .dataset import CvSplit, UserDataset, stratified_kfold
from .errors import DeadlineExceededError, NoModelError, TrainingError, ValidationError

DEFAULT_BUDGET_S = 60.0
DEFAULT_FOLDS = 10


@dataclass(frozen=True)
class SearchBudget:
    wall_clock_s: float = DEFAULT_BUDGET_S
    max_evaluations: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.wall_clock_s <= 0:
            raise ValidationError("wall_clock_s must be positive")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ValidationError("max_evaluations must be >= 1 when set")


@dataclass(frozen=True)
class TraceEntry:
    index: int
    algorithm: str
    params: dict
    cv_accuracy: float
    elapsed_s: float


@dataclass(frozen=True)
class SearchTrace:
    entries: tuple[TraceEntry, ...] = field(default=())
    chosen_index: int = -1

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def best(self) -> TraceEntry:
        return self.entries[self.chosen_index]

    def write_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("eval_index", "algorithm", "params_json",
                             "cv_accuracy", "elapsed_s"))
            for e in self.entries:
                writer.writerow((e.index, e.algorithm,
                                 json.dumps(e.params, sort_keys=True),
                                 f"{e.cv_accuracy:.17g}", f"{e.elapsed_s:.6f}"))


def _fold_instances(ds: UserDataset, split: CvSplit, fold: int):
    test_idx = split.folds[fold]
    test_mask = np.zeros(len(ds.instances), dtype=bool)
    test_mask[test_idx] = True
    train = [ds.instances[i] for i in range(len(ds.instances)) if not test_mask[i]]
    test = [ds.instances[i] for i in test_idx]
    return train, test


def evaluate_config(ds: UserDataset, algorithm: str, params: dict,
                    split: CvSplit, seed: int, deadline: Optional[float] = None) -> float:
    """Mean held-out accuracy over the folds; deterministic given the seed.

    Raises DeadlineExceededError if the wall-clock deadline passes before all
    folds complete; training failures propagate to the caller.
    """
    correct = 0
    total = 0
    for fold in range(split.k):
        if deadline is not None and time.perf_counter() >= deadline:
            raise DeadlineExceededError("budget exhausted mid-evaluation")
        train_inst, test_inst = _fold_instances(ds, split, fold)
        model = classifiers.train(algorithm, params, train_inst, seed)
        X = np.stack([i.features for i in test_inst])
        predicted = classifiers.predict_labels(model, X)
        correct += sum(1 for inst, lab in zip(test_inst, predicted) if inst.label == lab)
        total += len(test_inst)
    return correct / total


def _config_stream(rng: np.random.Generator):
    for algorithm in classifiers.ALGORITHMS:
        yield algorithm, classifiers.default_params(algorithm)
    while True:
        algorithm = classifiers.ALGORITHMS[int(rng.integers(len(classifiers.ALGORITHMS)))]
        yield algorithm, classifiers.sample_params(algorithm, rng)


def select_model(ds: UserDataset, budget: SearchBudget,
                 k_folds: int = DEFAULT_FOLDS) -> tuple[classifiers.TrainedModel, SearchTrace]:
    """Search under the budget and return the best model plus the audit trace."""
    start = time.perf_counter()
    deadline = start + budget.wall_clock_s
    split = stratified_kfold(ds, k_folds, budget.seed)
    rng = np.random.default_rng(budget.seed)
    entries: list[TraceEntry] = []
    for algorithm, params in _config_stream(rng):
        if budget.max_evaluations is not None and len(entries) >= budget.max_evaluations:
            break
        if time.perf_counter() >= deadline:
            break
        try:
            accuracy = evaluate_config(ds, algorithm, params, split, budget.seed,
                                       deadline=deadline)
        except DeadlineExceededError:
            break
        except TrainingError:
            accuracy = -math.inf  # keep searching past failing configurations
        entries.append(TraceEntry(len(entries), algorithm, params,
                                  accuracy, time.perf_counter() - start))
    viable = [e for e in entries if math.isfinite(e.cv_accuracy)]
    if not viable:
        raise NoModelError(
            "budget expired before any configuration was evaluated; retry with "
            "a larger budget"
        )
    best = max(viable, key=lambda e: e.cv_accuracy)  # ties keep the earliest
    trace = SearchTrace(tuple(entries), best.index)
    model = classifiers.train(best.algorithm, best.params, ds.instances, budget.seed)
    return classifiers.with_cv_accuracy(model, best.cv_accuracy), trace


def cross_val_predict(ds: UserDataset, algorithm: str, params: dict,
                      split: CvSplit, seed: int) -> list[str]:
    """Pooled held-out predictions: one label per instance, in dataset order."""
    predicted = [None] * len(ds.instances)
    for fold in range(split.k):
        train_inst, test_inst = _fold_instances(ds, split, fold)
        model = classifiers.train(algorithm, params, train_inst, seed)
        X = np.stack([i.features for i in test_inst])
        labels = classifiers.predict_labels(model, X)
        for idx, lab in zip(split.folds[fold], labels):
            predicted[int(idx)] = lab
    return predicted
