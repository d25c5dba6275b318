"""R² hand cases, fold partitioning, and both hyperparameter searchers."""

import json

import numpy as np
import pytest

from soundscape_ml.mlp import MLPConfig
from soundscape_ml.selection import (
    SearchSpace,
    Trial,
    kfold_cv,
    kfold_indices,
    r2,
    r2_multi,
    random_search,
    tpe_search,
)


class TestR2:
    def test_perfect_prediction(self):
        y = np.array([3.0, -1.0, 2.5])
        assert r2(y, y) == 1.0

    def test_mean_predictor_scores_zero(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        assert r2(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case_half(self):
        # SSE = 1, SST = 2 -> R^2 = 1 - 1/2.
        assert r2([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.5, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            r2([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            r2([1.0, 2.0], [1.0])

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            y = rng.normal(size=20)
            y_hat = rng.normal(size=20)
            score = r2(y, y_hat)
            assert score <= 1.0
            assert (score == 1.0) == bool(np.all(y == y_hat))

    def test_multi_output_mean(self):
        y = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        y_hat = np.array([[1.0, 1.0], [2.0, 2.0], [4.0, 3.0]])
        assert r2_multi(y, y_hat) == pytest.approx((0.5 + 1.0) / 2, abs=1e-12)


class TestKFold:
    def test_even_split(self):
        folds = kfold_indices(100, 10, seed=0)
        assert [len(f) for f in folds] == [10] * 10

    def test_remainder_split(self):
        folds = kfold_indices(95, 10, seed=0)
        assert [len(f) for f in folds] == [10] * 5 + [9] * 5

    def test_deterministic(self):
        a = kfold_indices(57, 5, seed=9)
        b = kfold_indices(57, 5, seed=9)
        assert all((x == y).all() for x, y in zip(a, b))

    def test_disjoint_and_exhaustive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(10, 200))
            k = int(rng.integers(2, min(10, n) + 1))
            folds = kfold_indices(n, k, seed=int(rng.integers(0, 1000)))
            flat = np.concatenate(folds)
            assert len(flat) == n
            assert len(np.unique(flat)) == n

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            kfold_indices(5, 10, seed=0)

    def test_cv_scores_learnable_function(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, size=(60, 2))
        y = x[:, :1] * 2.0 - x[:, 1:] * 0.5
        config = MLPConfig(hidden_layers=1, units=16, l2=0.0, epochs=300,
                           lr=1e-2, early_stopping=False, seed=0)
        scores = kfold_cv(x, y, config, k=3, seed=0)
        assert len(scores) == 3
        assert min(scores) > 0.8


def valley_objective(layers: int, units: int) -> float:
    """Deterministic objective peaking at (3, 32)."""
    return 1.0 - abs(layers - 3) / 10.0 - abs(np.log2(units) - 5.0) / 10.0


def exhaustive_argmax(space: SearchSpace):
    best = None
    for layers, units in space.all_configs():
        score = valley_objective(layers, units)
        if best is None or score > best[0]:
            best = (score, layers, units)
    return best


class TestTPE:
    def test_full_budget_recovers_global_optimum(self):
        space = SearchSpace()
        result = tpe_search(space, valley_objective, n_iter=100, seed=0)
        score, layers, units = exhaustive_argmax(space)
        assert (result.best_layers, result.best_units) == (layers, units) == (3, 32)
        assert result.best_score == pytest.approx(score, abs=1e-12)
        assert len(result.trials) == space.size  # enumeration fallback

    def test_partial_budget_finds_good_region(self):
        space = SearchSpace()
        result = tpe_search(space, valley_objective, n_iter=40, seed=1)
        assert len(result.trials) == 40
        assert result.best_score >= 0.9  # near the (3, 32) peak

    def test_same_seed_identical_trials(self):
        space = SearchSpace()
        a = tpe_search(space, valley_objective, n_iter=30, seed=3)
        b = tpe_search(space, valley_objective, n_iter=30, seed=3)
        assert [(t.layers, t.units) for t in a.trials] == [(t.layers, t.units) for t in b.trials]

    def test_returned_score_matches_fold_mean(self):
        space = SearchSpace(layers=(1, 2), units=(4, 8))

        def objective(layers, units):
            return [valley_objective(layers, units), valley_objective(layers, units) - 0.1]

        result = tpe_search(space, objective, n_iter=10, seed=0)
        best = next(
            t for t in result.trials if (t.layers, t.units) == result.best_config
        )
        assert result.best_score == pytest.approx(np.mean(best.fold_scores), abs=1e-12)

    def test_configs_stay_inside_space(self):
        space = SearchSpace(layers=(2, 4, 6), units=(8, 64))
        result = tpe_search(space, valley_objective, n_iter=20, seed=5)
        for trial in result.trials:
            assert (trial.layers, trial.units) in space

    def test_tie_broken_toward_smaller_architecture(self):
        space = SearchSpace(layers=(1, 2, 3), units=(4, 8))

        result = tpe_search(space, lambda l, u: 1.0, n_iter=6, seed=0)
        assert (result.best_layers, result.best_units) == (1, 4)

    def test_non_finite_objective_rejected(self):
        space = SearchSpace(layers=(1,), units=(4,))
        with pytest.raises(ValueError, match="non-finite"):
            tpe_search(space, lambda l, u: float("nan"), n_iter=1, seed=0)


class TestRandomSearch:
    def test_full_enumeration_matches_bruteforce(self):
        space = SearchSpace()
        result = random_search(space, valley_objective, n_iter=100, seed=0)
        _, layers, units = exhaustive_argmax(space)
        assert (result.best_layers, result.best_units) == (layers, units)
        assert len(result.trials) == space.size

    def test_no_repeats_under_budget(self):
        space = SearchSpace()
        result = random_search(space, valley_objective, n_iter=30, seed=2)
        configs = [(t.layers, t.units) for t in result.trials]
        assert len(set(configs)) == 30

    def test_deterministic(self):
        space = SearchSpace()
        a = random_search(space, valley_objective, n_iter=15, seed=4)
        b = random_search(space, valley_objective, n_iter=15, seed=4)
        assert [(t.layers, t.units) for t in a.trials] == [(t.layers, t.units) for t in b.trials]


class TestTrialLog:
    def test_log_written_and_resumable(self, tmp_path):
        space = SearchSpace(layers=(1, 2, 3, 4), units=(4, 8, 16))
        log = tmp_path / "trials.jsonl"
        partial = tpe_search(space, valley_objective, n_iter=5, seed=0, log_path=log)
        assert len(partial.trials) == 5
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(lines) == 5
        assert all("config" in line and "fold_scores" in line for line in lines)

        resumed = tpe_search(space, valley_objective, n_iter=9, seed=0, log_path=log, resume=True)
        assert len(resumed.trials) == 9
        # The first five trials are the logged ones, not recomputed differently.
        assert [(t.layers, t.units) for t in resumed.trials[:5]] == [
            (t.layers, t.units) for t in partial.trials
        ]
        assert len(log.read_text().splitlines()) == 9

    def test_fresh_run_truncates_stale_log(self, tmp_path):
        space = SearchSpace(layers=(1, 2), units=(4, 8))
        log = tmp_path / "trials.jsonl"
        tpe_search(space, valley_objective, n_iter=3, seed=0, log_path=log)
        tpe_search(space, valley_objective, n_iter=2, seed=1, log_path=log)
        assert len(log.read_text().splitlines()) == 2

    def test_trial_roundtrip(self):
        trial = Trial(index=3, layers=2, units=16, fold_scores=(0.5, 0.7), timestamp=123.0, seed=9)
        assert Trial.from_jsonable(trial.to_jsonable()) == trial
