import time

import numpy as np
import pytest

from eegauth import classifiers
from eegauth.autoselect import (
    SearchBudget,
    cross_val_predict,
    evaluate_config,
    select_model,
)
from eegauth.dataset import (
    Instance,
    LABEL_GENUINE,
    LABEL_IMPOSTOR,
    assemble_user_dataset,
    stratified_kfold,
)
from eegauth.errors import NoModelError, ValidationError

from conftest import user_dataset


def tiny_dataset(n_per_class=60, spread=1.0, seed=0):
    rng = np.random.default_rng(seed)
    own = [Instance(rng.normal(8.0, spread, 15) ** 2, "unlabeled", "a", i)
           for i in range(n_per_class)]
    pool = [Instance(rng.normal(4.0, spread, 15) ** 2, "unlabeled", "b", i)
            for i in range(n_per_class)]
    return assemble_user_dataset("a", own, pool, seed)


class TestEvaluateConfig:
    def test_duplicates_across_folds_memorized_by_knn(self):
        # each held-out instance has an exact same-label duplicate in the
        # training fold, so 1-NN scores a perfect accuracy on them
        rng = np.random.default_rng(1)
        own_block = rng.normal(8, 1, (15, 15)) ** 2
        pool_block = rng.normal(4, 1, (15, 15)) ** 2
        own = [Instance(own_block[i % 15], "unlabeled", "a", i) for i in range(30)]
        pool = [Instance(pool_block[i % 15], "unlabeled", "b", i) for i in range(30)]
        ds = assemble_user_dataset("a", own, pool, seed=0)
        from eegauth.dataset import CvSplit
        first_copies = [i for i, inst in enumerate(ds.instances)
                        if inst.segment_index < 15]
        second_copies = [i for i, inst in enumerate(ds.instances)
                         if inst.segment_index >= 15]
        split = CvSplit((np.array(first_copies), np.array(second_copies)))
        accuracy = evaluate_config(ds, "knn", {"k": 1, "metric": "euclidean"},
                                   split, seed=0)
        assert accuracy == 1.0

    def test_always_impostor_scores_half_on_balanced(self):
        # constant features make every model fail closed to impostor, which
        # is exactly the majority baseline on a balanced dataset
        own = [Instance(np.full(15, 3.0), "unlabeled", "a", i) for i in range(40)]
        pool = [Instance(np.full(15, 3.0), "unlabeled", "b", i) for i in range(40)]
        ds = assemble_user_dataset("a", own, pool, seed=1)
        split = stratified_kfold(ds, 5, seed=1)
        accuracy = evaluate_config(ds, "lda", {"shrinkage": 0.0}, split, seed=1)
        assert accuracy == 0.5

    def test_deterministic(self, separable_dataset):
        split = stratified_kfold(separable_dataset, 5, seed=2)
        params = classifiers.default_params("random_forest")
        a = evaluate_config(separable_dataset, "random_forest", params, split, 3)
        b = evaluate_config(separable_dataset, "random_forest", params, split, 3)
        assert a == b

    def test_score_in_unit_interval(self, separable_dataset):
        split = stratified_kfold(separable_dataset, 5, seed=2)
        for algorithm in classifiers.ALGORITHMS:
            acc = evaluate_config(separable_dataset, algorithm,
                                  classifiers.default_params(algorithm), split, 0)
            assert 0.0 <= acc <= 1.0


class TestSelectModel:
    def test_separable_dataset_high_accuracy(self, separable_dataset):
        model, trace = select_model(separable_dataset,
                                    SearchBudget(30.0, 10, seed=4), k_folds=5)
        assert model.cv_accuracy >= 0.95
        assert len(trace.entries) == 10

    def test_budget_too_small_raises(self, separable_dataset):
        with pytest.raises(NoModelError):
            select_model(separable_dataset, SearchBudget(0.001, None, seed=0),
                         k_folds=10)

    def test_trace_argmax_is_returned_model(self, separable_dataset):
        model, trace = select_model(separable_dataset,
                                    SearchBudget(30.0, 8, seed=5), k_folds=5)
        best = trace.best()
        scores = [e.cv_accuracy for e in trace.entries]
        assert best.cv_accuracy == max(scores)
        assert scores.index(max(scores)) == trace.chosen_index  # earliest tie wins
        assert (best.algorithm, best.params) == (model.algorithm, model.params)
        assert model.cv_accuracy == best.cv_accuracy

    def test_warm_start_covers_every_algorithm(self, separable_dataset):
        _, trace = select_model(separable_dataset, SearchBudget(60.0, 6, seed=6),
                                k_folds=5)
        assert [e.algorithm for e in trace.entries] == list(classifiers.ALGORITHMS)
        for entry in trace.entries:
            assert entry.params == classifiers.default_params(entry.algorithm)

    def test_more_evaluations_never_hurt(self, separable_dataset):
        # same seed means the shorter search evaluates a prefix of the longer
        short, _ = select_model(separable_dataset, SearchBudget(60.0, 3, seed=7),
                                k_folds=5)
        long, _ = select_model(separable_dataset, SearchBudget(60.0, 15, seed=7),
                               k_folds=5)
        assert long.cv_accuracy >= short.cv_accuracy

    def test_budget_compliance_small(self):
        ds = tiny_dataset()
        started = time.perf_counter()
        _, trace = select_model(ds, SearchBudget(1.5, None, seed=8), k_folds=5)
        elapsed = time.perf_counter() - started
        durations = np.diff([0.0] + [e.elapsed_s for e in trace.entries])
        assert elapsed <= 1.5 + max(durations.max(), 0.3) + 0.3

    def test_seed_changes_search_path(self, separable_dataset):
        _, trace_a = select_model(separable_dataset, SearchBudget(60.0, 12, seed=1),
                                  k_folds=5)
        _, trace_b = select_model(separable_dataset, SearchBudget(60.0, 12, seed=2),
                                  k_folds=5)
        configs_a = [(e.algorithm, tuple(sorted(e.params.items())))
                     for e in trace_a.entries[6:]]
        configs_b = [(e.algorithm, tuple(sorted(e.params.items())))
                     for e in trace_b.entries[6:]]
        assert configs_a != configs_b

    def test_chance_dataset_stays_near_half(self, small_chance_table):
        ds = user_dataset(small_chance_table, "S01", seed=3)
        model, _ = select_model(ds, SearchBudget(20.0, 8, seed=9), k_folds=5)
        assert 0.45 <= model.cv_accuracy <= 0.55

    def test_invalid_budget_rejected(self):
        with pytest.raises(ValidationError):
            SearchBudget(0.0)
        with pytest.raises(ValidationError):
            SearchBudget(10.0, 0)


class TestCrossValPredict:
    def test_every_instance_predicted_once(self, separable_dataset):
        split = stratified_kfold(separable_dataset, 5, seed=4)
        predicted = cross_val_predict(separable_dataset, "lda",
                                      classifiers.default_params("lda"), split, 4)
        assert len(predicted) == len(separable_dataset.instances)
        assert all(p in (LABEL_GENUINE, LABEL_IMPOSTOR) for p in predicted)

    def test_separable_pooled_accuracy(self, separable_dataset):
        split = stratified_kfold(separable_dataset, 5, seed=4)
        predicted = cross_val_predict(separable_dataset, "knn",
                                      classifiers.default_params("knn"), split, 4)
        truth = [i.label for i in separable_dataset.instances]
        assert np.mean([p == t for p, t in zip(predicted, truth)]) >= 0.95


class TestTraceExport:
    def test_csv_layout(self, tmp_path, separable_dataset):
        _, trace = select_model(separable_dataset, SearchBudget(30.0, 4, seed=1),
                                k_folds=5)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "eval_index,algorithm,params_json,cv_accuracy,elapsed_s"
        assert len(lines) == 5
