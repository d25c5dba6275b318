"""Two-stage experiment pipeline: feature assembly, predictors, result matrix.

Stage one trains a seven-output regressor for the sound-source audibility
scores from acoustic and/or image features.  Stage two trains one regressor
per impression (pleasantness, eventfulness) on a feature combination that may
include the oracle source scores or the stage-one predictions (eSS).  The
experiment matrix evaluates every requested (impression, combination, source)
cell: six combinations with oracle sources, and the three source-bearing
combinations with each of the three eSS variants.

Feature blocks concatenate in the fixed order ES (126 acoustic dims) then AP
(128 image-bottleneck dims) then SS (7 source dims scaled to [0, 1]), so the
six combinations have dimensions 126/133/128/135/254/261.
"""

from __future__ import annotations

import hashlib
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import mlp, selection
from .acoustic import FEATURE_DIM as ES_DIM
from .acoustic import AcousticFeature
from .data import DatasetManifest, SoundSourceScores
from .embedding import BOTTLENECK_DIM as AP_DIM
from .embedding import BottleneckFeature
from .impressions import impressions_from_attributes

SS_DIM = 7
IMPRESSIONS = ("pleasantness", "eventfulness")

# Test accuracies reported for this method on the original annotated corpus
# (single annotator, not distributable); carried in reports for comparison.
REFERENCE_TEST_R2 = {
    ("pleasantness", "ES+SS", "oracle"): 0.659,
    ("eventfulness", "AP+SS", "oracle"): 0.769,
    ("pleasantness", "ES+SS", "eSS[ES+AP]"): 0.601,
    ("eventfulness", "ES+SS", "eSS[AP]"): 0.742,
}


class PipelineError(ValueError):
    """Contract violations in feature assembly or experiment setup."""


class FeatureCombo(Enum):
    """Input combination for the impression predictor."""

    ES = ("ES", True, False, False)
    ES_SS = ("ES+SS", True, False, True)
    AP = ("AP", False, True, False)
    AP_SS = ("AP+SS", False, True, True)
    ES_AP = ("ES+AP", True, True, False)
    ES_AP_SS = ("ES+AP+SS", True, True, True)

    def __init__(self, label: str, has_es: bool, has_ap: bool, has_ss: bool):
        self.label = label
        self.has_es = has_es
        self.has_ap = has_ap
        self.has_ss = has_ss

    @property
    def dim(self) -> int:
        return ES_DIM * self.has_es + AP_DIM * self.has_ap + SS_DIM * self.has_ss

    @classmethod
    def from_label(cls, label: str) -> "FeatureCombo":
        for member in cls:
            if member.label.lower() == label.lower():
                return member
        raise PipelineError(f"unknown feature combination: {label!r}")


class SSSource(Enum):
    """Where the SS block of an impression model's input comes from."""

    ORACLE = ("oracle", None)
    ESS_ES = ("eSS[ES]", FeatureCombo.ES)
    ESS_AP = ("eSS[AP]", FeatureCombo.AP)
    ESS_ES_AP = ("eSS[ES+AP]", FeatureCombo.ES_AP)

    def __init__(self, label: str, predictor_inputs: FeatureCombo | None):
        self.label = label
        self.predictor_inputs = predictor_inputs

    @classmethod
    def from_label(cls, label: str) -> "SSSource":
        for member in cls:
            if member.label.lower() == label.lower():
                return member
        raise PipelineError(f"unknown sound-source mode: {label!r}")


SS_BEARING_COMBOS = (FeatureCombo.ES_SS, FeatureCombo.AP_SS, FeatureCombo.ES_AP_SS)
ESS_SOURCES = (SSSource.ESS_ES, SSSource.ESS_AP, SSSource.ESS_ES_AP)


def unit_source_scores(scores: SoundSourceScores | np.ndarray) -> np.ndarray:
    """Map 1..5 audibility scores onto [0, 1] via (s - 1) / 4."""
    raw = scores.as_array() if isinstance(scores, SoundSourceScores) else np.asarray(scores, dtype=float)
    if raw.shape[-1] != SS_DIM:
        raise PipelineError(f"expected {SS_DIM} source scores, got shape {raw.shape}")
    if np.any(raw < 1.0) or np.any(raw > 5.0):
        raise PipelineError("source scores must lie in 1..5")
    return (raw - 1.0) / 4.0


def assemble(
    combo: FeatureCombo,
    es: np.ndarray | AcousticFeature | None = None,
    ap: np.ndarray | BottleneckFeature | None = None,
    ss: np.ndarray | SoundSourceScores | None = None,
) -> np.ndarray:
    """Concatenate one recording's feature blocks in ES || AP || SS order.

    ``ss`` accepts raw 1..5 scores (mapped via (s-1)/4) or an already-unit
    vector in [0, 1] such as a stage-one prediction.
    """
    parts = []
    if combo.has_es:
        if es is None:
            raise PipelineError(f"{combo.label} requires the acoustic block")
        values = es.values if isinstance(es, AcousticFeature) else np.asarray(es, dtype=float)
        if values.shape != (ES_DIM,):
            raise PipelineError(f"acoustic block must have {ES_DIM} values, got {values.shape}")
        parts.append(values)
    if combo.has_ap:
        if ap is None:
            raise PipelineError(f"{combo.label} requires the image block")
        values = ap.vector if isinstance(ap, BottleneckFeature) else np.asarray(ap, dtype=float)
        if values.shape != (AP_DIM,):
            raise PipelineError(f"image block must have {AP_DIM} values, got {values.shape}")
        parts.append(values)
    if combo.has_ss:
        if ss is None:
            raise PipelineError(f"{combo.label} requires the sound-source block")
        if isinstance(ss, SoundSourceScores):
            values = unit_source_scores(ss)
        else:
            values = np.asarray(ss, dtype=float)
            if values.shape != (SS_DIM,):
                raise PipelineError(f"source block must have {SS_DIM} values, got {values.shape}")
            if np.any(values < 0.0) or np.any(values > 1.0):
                raise PipelineError(
                    "array SS blocks must already be unit-scaled; pass "
                    "SoundSourceScores or use unit_source_scores for raw 1..5 scores"
                )
        parts.append(values)
    vector = np.concatenate(parts)
    assert vector.shape == (combo.dim,)
    return vector


@dataclass(frozen=True)
class TaggedMatrix:
    """Feature matrix plus the provenance of its SS block (leakage guard)."""

    values: np.ndarray
    ss_provenance: str | None  # "oracle", "predicted", or None when no SS block


@dataclass
class ExperimentData:
    """Aligned per-recording arrays feeding the experiment matrix."""

    ids: tuple[str, ...]
    es: np.ndarray  # (n, 126)
    ap: np.ndarray  # (n, 128)
    ss_unit: np.ndarray  # (n, 7) oracle audibility in [0, 1]
    targets: np.ndarray  # (n, 2) pleasantness, eventfulness

    def __post_init__(self) -> None:
        n = len(self.ids)
        for name, matrix, width in (
            ("es", self.es, ES_DIM),
            ("ap", self.ap, AP_DIM),
            ("ss_unit", self.ss_unit, SS_DIM),
            ("targets", self.targets, 2),
        ):
            if matrix.shape != (n, width):
                raise PipelineError(f"{name} must be ({n}, {width}), got {matrix.shape}")

    def __len__(self) -> int:
        return len(self.ids)


def build_dataset(
    manifest: DatasetManifest,
    features: Mapping[str, AcousticFeature],
    bottlenecks: Mapping[str, BottleneckFeature] | Mapping[str, np.ndarray],
) -> ExperimentData:
    """Join manifest annotations with extracted feature files by recording id."""
    ids, es_rows, ap_rows, ss_rows, target_rows = [], [], [], [], []
    for entry in manifest.entries:
        rec_id = entry.recording.id
        if rec_id not in features:
            raise PipelineError(f"no acoustic feature for id {rec_id!r}")
        if rec_id not in bottlenecks:
            raise PipelineError(f"no image feature for id {rec_id!r}")
        bottleneck = bottlenecks[rec_id]
        vector = bottleneck.vector if isinstance(bottleneck, BottleneckFeature) else np.asarray(bottleneck)
        pair = impressions_from_attributes(entry.attributes)
        ids.append(rec_id)
        es_rows.append(features[rec_id].values)
        ap_rows.append(vector)
        ss_rows.append(unit_source_scores(entry.sources))
        target_rows.append((pair.p, pair.e))
    return ExperimentData(
        ids=tuple(ids),
        es=np.array(es_rows),
        ap=np.array(ap_rows),
        ss_unit=np.array(ss_rows),
        targets=np.array(target_rows),
    )


def assemble_matrix(
    combo: FeatureCombo,
    data: ExperimentData,
    rows: np.ndarray,
    ss_values: np.ndarray | None = None,
    ss_provenance: str | None = None,
) -> TaggedMatrix:
    """Stack feature rows for ``rows`` of the dataset.

    Without ``ss_values`` the oracle scores fill the SS block; otherwise the
    given unit-scaled values (e.g. stage-one predictions) are used and must be
    labelled with their provenance.
    """
    parts = []
    if combo.has_es:
        parts.append(data.es[rows])
    if combo.has_ap:
        parts.append(data.ap[rows])
    provenance = None
    if combo.has_ss:
        if ss_values is None:
            parts.append(data.ss_unit[rows])
            provenance = "oracle"
        else:
            if ss_values.shape != (len(rows), SS_DIM):
                raise PipelineError(
                    f"ss_values must be ({len(rows)}, {SS_DIM}), got {ss_values.shape}"
                )
            if ss_provenance not in ("oracle", "predicted"):
                raise PipelineError("explicit ss_values require a provenance label")
            parts.append(ss_values)
            provenance = ss_provenance
    return TaggedMatrix(values=np.concatenate(parts, axis=1), ss_provenance=provenance)


@dataclass(frozen=True)
class HPOSettings:
    """Hyperparameter-search conditions shared by both predictor stages."""

    algorithm: str = "tpe"  # "tpe" or "random"
    n_iter: int = 100
    cv_folds: int = 10
    space: selection.SearchSpace = field(default_factory=selection.SearchSpace)
    l2: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 32
    trial_epochs: int = 200
    trial_patience: int = 20
    final_epochs: int = 200
    final_patience: int = 20

    def trial_config(self, layers: int, units: int, seed: int) -> mlp.MLPConfig:
        return mlp.MLPConfig(
            hidden_layers=layers,
            units=units,
            l2=self.l2,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.trial_epochs,
            patience=self.trial_patience,
            seed=seed,
        )

    def final_config(self, layers: int, units: int, seed: int) -> mlp.MLPConfig:
        return mlp.MLPConfig(
            hidden_layers=layers,
            units=units,
            l2=self.l2,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.final_epochs,
            patience=self.final_patience,
            seed=seed,
        )


@dataclass(frozen=True)
class ExperimentSettings:
    n_train: int = 599
    n_test: int = 200
    seed: int = 0
    hpo: HPOSettings = field(default_factory=HPOSettings)
    combos: tuple[FeatureCombo, ...] = tuple(FeatureCombo)
    ss_sources: tuple[SSSource, ...] = tuple(SSSource)
    workers: int = 1
    log_dir: str | None = None

    def fingerprint(self) -> str:
        payload = {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "hpo": {
                "algorithm": self.hpo.algorithm,
                "n_iter": self.hpo.n_iter,
                "cv_folds": self.hpo.cv_folds,
                "layers": list(self.hpo.space.layers),
                "units": list(self.hpo.space.units),
                "l2": self.hpo.l2,
                "lr": self.hpo.lr,
                "batch_size": self.hpo.batch_size,
                "trial_epochs": self.hpo.trial_epochs,
                "final_epochs": self.hpo.final_epochs,
            },
            "combos": [c.label for c in self.combos],
            "ss_sources": [s.label for s in self.ss_sources],
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
        return digest[:16]


def cell_seed(master_seed: int, cell_id: str) -> int:
    return (master_seed + zlib.crc32(cell_id.encode())) % 2**32


def _search(
    settings: HPOSettings,
    objective,
    seed: int,
    log_path: Path | None,
) -> selection.SearchResult:
    cache: dict[tuple[int, int], list[float]] = {}

    def memoized(layers: int, units: int):
        key = (layers, units)
        if key not in cache:
            cache[key] = objective(layers, units)
        return cache[key]

    if settings.algorithm == "tpe":
        return selection.tpe_search(
            settings.space, memoized, n_iter=settings.n_iter, seed=seed, log_path=log_path
        )
    if settings.algorithm == "random":
        return selection.random_search(
            settings.space, memoized, n_iter=settings.n_iter, seed=seed, log_path=log_path
        )
    raise PipelineError(f"unknown search algorithm: {settings.algorithm}")


def train_sound_source_predictor(
    inputs: FeatureCombo,
    data: ExperimentData,
    train_rows: np.ndarray,
    hpo: HPOSettings,
    seed: int,
    log_path: Path | None = None,
) -> tuple[mlp.MLPModel, selection.SearchResult]:
    """Stage one: 7-output audibility regressor from ES/AP/ES+AP inputs."""
    if inputs.has_ss:
        raise PipelineError("sound-source predictor inputs cannot include SS")
    if len(train_rows) == 0:
        raise PipelineError("empty training set")
    x = assemble_matrix(inputs, data, train_rows).values
    y = data.ss_unit[train_rows]

    def objective(layers: int, units: int):
        return selection.kfold_cv(x, y, hpo.trial_config(layers, units, seed), k=hpo.cv_folds, seed=seed)

    result = _search(hpo, objective, seed, log_path)
    model = mlp.fit(hpo.final_config(result.best_layers, result.best_units, seed), x, y)
    return model, result


def predict_sources(model: mlp.MLPModel, x: np.ndarray) -> np.ndarray:
    """Stage-one predictions clamped to the unit score range."""
    return np.clip(mlp.predict(model, x), 0.0, 1.0)


def train_impression_predictor(
    combo: FeatureCombo,
    ss_source: SSSource,
    impression: str,
    data: ExperimentData,
    train_rows: np.ndarray,
    hpo: HPOSettings,
    seed: int,
    ss_train_values: np.ndarray | None = None,
    log_path: Path | None = None,
) -> tuple[mlp.MLPModel, selection.SearchResult]:
    """Stage two: single-output impression regressor for one matrix cell.

    For eSS sources the SS block of the training matrix must be stage-one
    predictions (``ss_train_values``); oracle values are rejected.
    """
    if impression not in IMPRESSIONS:
        raise PipelineError(f"unknown impression: {impression!r}")
    if ss_source is not SSSource.ORACLE and not combo.has_ss:
        raise PipelineError(f"combo {combo.label} has no SS slot for {ss_source.label}")
    if ss_source is not SSSource.ORACLE and combo.has_ss and ss_train_values is None:
        raise PipelineError(f"{ss_source.label} requires predicted source values")

    tagged = assemble_matrix(
        combo,
        data,
        train_rows,
        ss_values=ss_train_values if ss_source is not SSSource.ORACLE else None,
        ss_provenance="predicted" if ss_source is not SSSource.ORACLE else None,
    )
    y = data.targets[train_rows, IMPRESSIONS.index(impression)][:, None]

    def objective(layers: int, units: int):
        return selection.kfold_cv(
            tagged.values, y, hpo.trial_config(layers, units, seed), k=hpo.cv_folds, seed=seed
        )

    result = _search(hpo, objective, seed, log_path)
    model = mlp.fit(hpo.final_config(result.best_layers, result.best_units, seed), tagged.values, y)
    return model, result


def score_impression_model(
    model: mlp.MLPModel,
    test_matrix: TaggedMatrix,
    y_true: np.ndarray,
    ss_source: SSSource,
    combo: FeatureCombo,
) -> float:
    """Test-set R² with predictions clamped to [-1, 1] at reporting time.

    Asserts the leakage guard: an eSS-mode model must never see oracle SS
    values in its test matrix.
    """
    if combo.has_ss:
        expected = "oracle" if ss_source is SSSource.ORACLE else "predicted"
        if test_matrix.ss_provenance != expected:
            raise PipelineError(
                f"leakage guard: {ss_source.label} cell scored on "
                f"{test_matrix.ss_provenance!r} SS values"
            )
    predictions = np.clip(mlp.predict(model, test_matrix.values).ravel(), -1.0, 1.0)
    return selection.r2(y_true, predictions)


@dataclass
class CellResult:
    impression: str
    combo: str
    ss_source: str
    status: str = "ok"
    test_r2: float | None = None
    cv_score: float | None = None
    layers: int | None = None
    units: int | None = None
    seed: int = 0
    started: float = 0.0
    finished: float = 0.0
    error: str | None = None

    @property
    def key(self) -> str:
        return f"{self.impression}/{self.combo}/{self.ss_source}"

    def to_jsonable(self) -> dict:
        return {
            "impression": self.impression,
            "combo": self.combo,
            "ss_source": self.ss_source,
            "status": self.status,
            "test_r2": self.test_r2,
            "cv_score": self.cv_score,
            "config": {"layers": self.layers, "units": self.units},
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "error": self.error,
        }


@dataclass
class ExperimentReport:
    cells: list[CellResult]
    seed: int
    fingerprint: str
    started: float
    finished: float

    def cell(self, impression: str, combo: str, ss_source: str) -> CellResult:
        for cell in self.cells:
            if (cell.impression, cell.combo, cell.ss_source) == (impression, combo, ss_source):
                return cell
        raise KeyError(f"{impression}/{combo}/{ss_source}")

    def oracle_cells(self) -> list[CellResult]:
        return [c for c in self.cells if c.ss_source == "oracle"]

    def ess_cells(self) -> list[CellResult]:
        return [c for c in self.cells if c.ss_source != "oracle"]

    def summary(self) -> dict:
        out: dict = {}
        for impression in IMPRESSIONS:
            rows = [
                c for c in self.cells if c.impression == impression and c.status == "ok"
            ]
            oracle = [c for c in rows if c.ss_source == "oracle"]
            ess = [c for c in rows if c.ss_source != "oracle"]
            if not oracle:
                continue
            best_oracle = max(oracle, key=lambda c: c.test_r2)
            entry = {
                "best_oracle": {"cell": best_oracle.key, "test_r2": best_oracle.test_r2},
            }
            if ess:
                best_ess = max(ess, key=lambda c: c.test_r2)
                same_combo = next(
                    (c for c in oracle if c.combo == best_ess.combo), None
                )
                entry["best_ess"] = {"cell": best_ess.key, "test_r2": best_ess.test_r2}
                # Both baselines are reported because the stronger oracle cell
                # and the same-combination oracle cell can differ.
                entry["delta_vs_best_oracle"] = best_oracle.test_r2 - best_ess.test_r2
                if same_combo is not None:
                    entry["delta_vs_same_combo_oracle"] = (
                        same_combo.test_r2 - best_ess.test_r2
                    )
            out[impression] = entry
        return out

    def to_jsonable(self) -> dict:
        return {
            "meta": {
                "seed": self.seed,
                "fingerprint": self.fingerprint,
                "started": self.started,
                "finished": self.finished,
            },
            "reference": {
                f"{imp}/{combo}/{src}": value
                for (imp, combo, src), value in REFERENCE_TEST_R2.items()
            },
            "cells": {cell.key: cell.to_jsonable() for cell in self.cells},
            "summary": self.summary(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_jsonable(), indent=2), encoding="utf-8")

    def to_table(self) -> str:
        header = f"{'impression':<14} {'combo':<10} {'ss_source':<12} {'test R2':>8}  {'config':<10} status"
        lines = [header, "-" * len(header)]
        for cell in self.cells:
            r2_text = "-" if cell.test_r2 is None else f"{cell.test_r2:8.3f}"
            config = f"{cell.layers}x{cell.units}" if cell.layers else "-"
            lines.append(
                f"{cell.impression:<14} {cell.combo:<10} {cell.ss_source:<12} {r2_text:>8}  {config:<10} {cell.status}"
            )
        return "\n".join(lines)


def list_cells(settings: ExperimentSettings) -> list[tuple[str, FeatureCombo, SSSource]]:
    """Enumerate requested matrix cells in deterministic order."""
    cells = []
    for impression in IMPRESSIONS:
        for combo in settings.combos:
            if SSSource.ORACLE in settings.ss_sources:
                cells.append((impression, combo, SSSource.ORACLE))
            if combo.has_ss:
                for source in settings.ss_sources:
                    if source is not SSSource.ORACLE:
                        cells.append((impression, combo, source))
    return cells


def split_rows(n: int, settings: ExperimentSettings) -> tuple[np.ndarray, np.ndarray]:
    if settings.n_train + settings.n_test > n:
        raise PipelineError(
            f"insufficient data: need {settings.n_train}+{settings.n_test}, have {n}"
        )
    order = np.random.default_rng(settings.seed).permutation(n)
    return np.sort(order[: settings.n_train]), np.sort(
        order[settings.n_train : settings.n_train + settings.n_test]
    )


def _run_cell(payload: dict) -> CellResult:
    cell = CellResult(
        impression=payload["impression"],
        combo=payload["combo"].label,
        ss_source=payload["ss_source"].label,
        seed=payload["seed"],
        started=time.time(),
    )
    try:
        data: ExperimentData = payload["data"]
        combo: FeatureCombo = payload["combo"]
        source: SSSource = payload["ss_source"]
        train_rows = payload["train_rows"]
        test_rows = payload["test_rows"]
        hpo: HPOSettings = payload["hpo"]
        log_path = payload["log_path"]

        model, result = train_impression_predictor(
            combo,
            source,
            payload["impression"],
            data,
            train_rows,
            hpo,
            payload["seed"],
            ss_train_values=payload.get("ss_train_values"),
            log_path=log_path,
        )
        test_matrix = assemble_matrix(
            combo,
            data,
            test_rows,
            ss_values=payload.get("ss_test_values"),
            ss_provenance="predicted" if source is not SSSource.ORACLE else None,
        )
        y_true = data.targets[test_rows, IMPRESSIONS.index(payload["impression"])]
        cell.test_r2 = score_impression_model(model, test_matrix, y_true, source, combo)
        cell.cv_score = result.best_score
        cell.layers = result.best_layers
        cell.units = result.best_units
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort siblings
        cell.status = "failed"
        cell.error = f"{type(exc).__name__}: {exc}"
    cell.finished = time.time()
    return cell


def run_experiment_matrix(
    data: ExperimentData,
    settings: ExperimentSettings,
    completed: Sequence[CellResult] = (),
) -> ExperimentReport:
    """Evaluate every requested cell; failures are recorded, not raised.

    ``completed`` cells (e.g. from an interrupted run's report) are reused
    instead of recomputed.  Each cell derives its own seed from the master
    seed and the cell key, so results do not depend on execution order or
    worker count.
    """
    started = time.time()
    train_rows, test_rows = split_rows(len(data), settings)
    log_dir = Path(settings.log_dir) if settings.log_dir else None
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)

    done = {(c.impression, c.combo, c.ss_source): c for c in completed if c.status == "ok"}

    # Stage one: one predictor per eSS input pattern actually requested.
    needed_sources = [
        s
        for s in settings.ss_sources
        if s is not SSSource.ORACLE
        and any(c.has_ss for c in settings.combos)
    ]
    predictions: dict[SSSource, tuple[np.ndarray, np.ndarray]] = {}
    for source in needed_sources:
        stage_seed = cell_seed(settings.seed, f"stage1/{source.label}")
        log_path = log_dir / f"stage1_{source.label.replace('[', '_').replace(']', '')}.jsonl" if log_dir else None
        model, _ = train_sound_source_predictor(
            source.predictor_inputs, data, train_rows, settings.hpo, stage_seed, log_path
        )
        x_train = assemble_matrix(source.predictor_inputs, data, train_rows).values
        x_test = assemble_matrix(source.predictor_inputs, data, test_rows).values
        predictions[source] = (
            predict_sources(model, x_train),
            predict_sources(model, x_test),
        )

    payloads = []
    for impression, combo, source in list_cells(settings):
        if (impression, combo.label, source.label) in done:
            continue
        key = f"{impression}/{combo.label}/{source.label}"
        payload = {
            "impression": impression,
            "combo": combo,
            "ss_source": source,
            "data": data,
            "train_rows": train_rows,
            "test_rows": test_rows,
            "hpo": settings.hpo,
            "seed": cell_seed(settings.seed, key),
            "log_path": log_dir / f"{key.replace('/', '__').replace('[', '_').replace(']', '')}.jsonl"
            if log_dir
            else None,
        }
        if source is not SSSource.ORACLE:
            payload["ss_train_values"], payload["ss_test_values"] = predictions[source]
        payloads.append(payload)

    if settings.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            fresh = list(pool.map(_run_cell, payloads))
    else:
        fresh = [_run_cell(p) for p in payloads]

    by_key = {(c.impression, c.combo, c.ss_source): c for c in fresh}
    cells = []
    for impression, combo, source in list_cells(settings):
        key = (impression, combo.label, source.label)
        cells.append(done.get(key) or by_key[key])
    return ExperimentReport(
        cells=cells,
        seed=settings.seed,
        fingerprint=settings.fingerprint(),
        started=started,
        finished=time.time(),
    )
