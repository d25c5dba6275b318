"""Model selection: the R² score, k-fold cross-validation, and hyperparameter
search over the (hidden layers, units) grid.

The search space is discrete (10 layer counts x 9 widths = 90 configurations).
Two searchers share one interface and trial-log format: a tree-structured
Parzen estimator and a seeded random search used as an A/B baseline.  When
the trial budget covers the whole space both fall back to full enumeration,
so the returned optimum is exact.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import mlp

Config = tuple[int, int]  # (hidden_layers, units)
Objective = Callable[[int, int], "Sequence[float] | float"]

TPE_STARTUP_TRIALS = 10
TPE_GAMMA = 0.25
TPE_CANDIDATES = 24


def r2(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Coefficient of determination: 1 - sum((y - y_hat)^2) / sum((y - mean)^2)."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size == 0 or y.size != y_hat.size:
        raise ValueError(f"need equal nonzero lengths, got {y.size} and {y_hat.size}")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("zero variance in y; R^2 undefined")
    sse = float(np.sum((y - y_hat) ** 2))
    return 1.0 - sse / sst


def r2_multi(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean per-column R² for multi-output targets (plain R² for one column).

    Columns with zero variance carry no ranking information and are skipped;
    a fully constant target scores 0.0 so cross-validation can still compare
    configurations instead of erroring on degenerate folds.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    scores = [
        r2(y[:, j], y_hat[:, j])
        for j in range(y.shape[1])
        if np.ptp(y[:, j]) > 0.0
    ]
    return float(np.mean(scores)) if scores else 0.0


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffled partition into k near-equal folds (sizes differ by <= 1)."""
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(order[start : start + size]))
        start += size
    return folds


def kfold_cv(
    x: np.ndarray,
    y: np.ndarray,
    config: mlp.MLPConfig,
    k: int = 10,
    seed: int = 0,
) -> list[float]:
    """Per-fold held-out R² for an MLP config (train on k-1 folds, score on 1)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    folds = kfold_indices(x.shape[0], k, seed)
    scores = []
    for i, held_out in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = mlp.fit(replace(config, seed=config.seed + i), x[train_idx], y[train_idx])
        scores.append(r2_multi(y[held_out], mlp.predict(model, x[held_out])))
    return scores


@dataclass(frozen=True)
class SearchSpace:
    layers: tuple[int, ...] = tuple(range(1, 11))
    units: tuple[int, ...] = tuple(2**p for p in range(2, 11))

    @property
    def size(self) -> int:
        return len(self.layers) * len(self.units)

    def all_configs(self) -> list[Config]:
        return [(l, u) for l in self.layers for u in self.units]

    def __contains__(self, config: Config) -> bool:
        return config[0] in self.layers and config[1] in self.units


@dataclass(frozen=True)
class Trial:
    index: int
    layers: int
    units: int
    fold_scores: tuple[float, ...]
    timestamp: float
    seed: int

    @property
    def score(self) -> float:
        return float(np.mean(self.fold_scores))

    def to_jsonable(self) -> dict:
        return {
            "trial": self.index,
            "config": {"layers": self.layers, "units": self.units},
            "fold_scores": list(self.fold_scores),
            "mean": self.score,
            "timestamp": self.timestamp,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "Trial":
        return cls(
            index=payload["trial"],
            layers=payload["config"]["layers"],
            units=payload["config"]["units"],
            fold_scores=tuple(payload["fold_scores"]),
            timestamp=payload["timestamp"],
            seed=payload["seed"],
        )


@dataclass(frozen=True)
class SearchResult:
    best_layers: int
    best_units: int
    best_score: float
    trials: tuple[Trial, ...]

    @property
    def best_config(self) -> Config:
        return (self.best_layers, self.best_units)


def _architecture_size(config: Config) -> int:
    # Parameter-count proxy with unit input/output width; used only to break
    # score ties in favor of the smaller network.
    layers, units = config
    return (layers - 1) * units * units + 2 * units


def _pick_best(trials: Sequence[Trial]) -> Trial:
    return min(
        trials, key=lambda t: (-t.score, _architecture_size((t.layers, t.units)), t.index)
    )


def _evaluate(
    objective: Objective, config: Config, index: int, seed: int
) -> Trial:
    raw = objective(config[0], config[1])
    fold_scores = (float(raw),) if np.isscalar(raw) else tuple(float(v) for v in raw)
    if not all(np.isfinite(fold_scores)):
        raise ValueError(f"objective returned non-finite score for {config}: {fold_scores}")
    return Trial(
        index=index,
        layers=config[0],
        units=config[1],
        fold_scores=fold_scores,
        timestamp=time.time(),
        seed=seed,
    )


def _load_trial_log(log_path: Path) -> list[Trial]:
    trials = []
    if log_path.exists():
        with log_path.open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    trials.append(Trial.from_jsonable(json.loads(line)))
    return trials


def _append_trial(log_path: Path | None, trial: Trial) -> None:
    if log_path is None:
        return
    with log_path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(trial.to_jsonable()) + "\n")


def _categorical_weights(
    values: Sequence[int], observed: Sequence[int]
) -> np.ndarray:
    # Add-one smoothed category frequencies.
    counts = np.array([1.0 + sum(1 for o in observed if o == v) for v in values])
    return counts / counts.sum()


def _finish_search(
    space: SearchSpace,
    objective: Objective,
    trials: list[Trial],
    n_iter: int,
    seed: int,
    log_path: Path | None,
    propose: Callable[[np.random.Generator, list[Trial]], Config],
) -> SearchResult:
    rng = np.random.default_rng(seed)
    if n_iter >= space.size:
        # The budget covers the space: evaluate every config exactly once.
        done = {(t.layers, t.units) for t in trials}
        for config in space.all_configs():
            if config in done:
                continue
            trial = _evaluate(objective, config, len(trials), seed)
            trials.append(trial)
            _append_trial(log_path, trial)
    else:
        while len(trials) < n_iter:
            config = propose(rng, trials)
            trial = _evaluate(objective, config, len(trials), seed)
            trials.append(trial)
            _append_trial(log_path, trial)
    best = _pick_best(trials)
    return SearchResult(
        best_layers=best.layers,
        best_units=best.units,
        best_score=best.score,
        trials=tuple(trials),
    )


def tpe_search(
    space: SearchSpace,
    objective: Objective,
    n_iter: int = 100,
    seed: int = 0,
    n_startup: int = TPE_STARTUP_TRIALS,
    gamma: float = TPE_GAMMA,
    n_candidates: int = TPE_CANDIDATES,
    log_path: str | Path | None = None,
    resume: bool = False,
) -> SearchResult:
    """Maximize the objective with a tree-structured Parzen estimator.

    The first ``n_startup`` trials sample the space uniformly.  Afterwards the
    observed trials are split at the ``gamma`` quantile of the score into good
    and bad sets, each categorical dimension gets smoothed frequency densities
    l(x) (good) and g(x) (bad), and of ``n_candidates`` draws from l the one
    maximizing l(x)/g(x) is evaluated next.  Ties on the final score are
    broken toward the smaller architecture, then the earlier trial.
    """
    log = Path(log_path) if log_path is not None else None
    trials = _load_trial_log(log) if (log is not None and resume) else []
    if log is not None and not resume and log.exists():
        log.unlink()

    def propose(rng: np.random.Generator, observed: list[Trial]) -> Config:
        if len(observed) < n_startup:
            return (
                int(rng.choice(space.layers)),
                int(rng.choice(space.units)),
            )
        ranked = sorted(observed, key=lambda t: -t.score)
        n_good = max(1, int(np.floor(gamma * len(ranked))))
        good, bad = ranked[:n_good], ranked[n_good:]
        weights = {}
        for dim, values in (("layers", space.layers), ("units", space.units)):
            l_w = _categorical_weights(values, [getattr(t, dim) for t in good])
            g_w = _categorical_weights(values, [getattr(t, dim) for t in bad])
            weights[dim] = (l_w, g_w)
        best_config: Config | None = None
        best_ratio = -np.inf
        for _ in range(n_candidates):
            li = rng.choice(len(space.layers), p=weights["layers"][0])
            ui = rng.choice(len(space.units), p=weights["units"][0])
            ratio = (
                weights["layers"][0][li] / weights["layers"][1][li]
                * weights["units"][0][ui] / weights["units"][1][ui]
            )
            if ratio > best_ratio:
                best_ratio = ratio
                best_config = (int(space.layers[li]), int(space.units[ui]))
        assert best_config is not None
        return best_config

    return _finish_search(space, objective, trials, n_iter, seed, log, propose)


def random_search(
    space: SearchSpace,
    objective: Objective,
    n_iter: int = 100,
    seed: int = 0,
    log_path: str | Path | None = None,
    resume: bool = False,
) -> SearchResult:
    """Seeded uniform search (without replacement) over the same space."""
    log = Path(log_path) if log_path is not None else None
    trials = _load_trial_log(log) if (log is not None and resume) else []
    if log is not None and not resume and log.exists():
        log.unlink()

    configs = space.all_configs()
    order = np.random.default_rng(seed).permutation(len(configs))
    pending = [configs[i] for i in order]

    def propose(rng: np.random.Generator, observed: list[Trial]) -> Config:
        done = {(t.layers, t.units) for t in observed}
        for config in pending:
            if config not in done:
                return config
        return pending[len(observed) % len(pending)]

    return _finish_search(space, objective, trials, n_iter, seed, log, propose)
