"""Aerial-image features: 2048-dim embeddings reduced to 128-dim bottlenecks.

Embeddings normally come from an external convolutional network (the 2048-dim
penultimate-layer output) and are ingested from JSON-lines.  A deterministic
histogram/gradient embedder is provided as a desk-scale stand-in so the rest
of the pipeline can run without that network.  The reduction to 128
dimensions is a tanh autoencoder (2048 -> 1028 -> 128 -> 1028 -> 2048)
trained to reconstruct standardized embeddings with momentum SGD; the
bottleneck activations are the image features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _net
from .tiles import AerialImage

EMBEDDING_DIM = 2048
BOTTLENECK_DIM = 128
MODEL_FORMAT = "soundscape-ml-net"
MODEL_VERSION = 1


class EmbeddingError(ValueError):
    """Malformed embedding rows or untrainable embedding data."""


@dataclass(frozen=True)
class RawEmbedding:
    id: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", vec)
        if vec.shape != (EMBEDDING_DIM,):
            raise EmbeddingError(
                f"expected {EMBEDDING_DIM} values, got {vec.shape} for id {self.id!r}"
            )
        if not np.isfinite(vec).all():
            raise EmbeddingError(f"non-finite value in embedding {self.id!r}")


@dataclass(frozen=True)
class BottleneckFeature:
    id: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", vec)
        if vec.shape != (BOTTLENECK_DIM,):
            raise EmbeddingError(
                f"expected {BOTTLENECK_DIM} values, got {vec.shape} for id {self.id!r}"
            )


def ingest_embeddings(path: str | Path) -> list[RawEmbedding]:
    """Read JSON-lines ``{"id": ..., "vector": [...2048 floats]}`` rows."""
    path = Path(path)
    items: list[RawEmbedding] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"row {lineno}: invalid JSON ({exc})") from None
            try:
                items.append(RawEmbedding(id=str(record["id"]), vector=np.array(record["vector"], dtype=float)))
            except (KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"row {lineno}: {exc}") from None
    return items


def write_vectors(path: str | Path, items: Iterable[RawEmbedding | BottleneckFeature]) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps({"id": item.id, "vector": item.vector.tolist()}) + "\n")
            count += 1
    return count


def read_bottlenecks(path: str | Path) -> list[BottleneckFeature]:
    items = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            items.append(BottleneckFeature(id=str(record["id"]), vector=np.array(record["vector"])))
    return items


_GRID = 16  # baseline embedder cell grid; 224 / 16 = 14 px cells
_HIST_BINS = 4


def baseline_embed(image: AerialImage | np.ndarray, rec_id: str = "") -> RawEmbedding:
    """Deterministic stand-in embedding from fixed image statistics.

    Per cell of a 16x16 grid: mean R/G/B, a 4-bin grayscale histogram and the
    mean squared luminance gradient, concatenated and zero-padded to 2048.
    """
    pixels = image.pixels if isinstance(image, AerialImage) else np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {pixels.shape}")
    h, w = pixels.shape[:2]
    cell_h, cell_w = h // _GRID, w // _GRID
    rgb = pixels.astype(float) / 255.0
    gray = rgb.mean(axis=2)
    gx = np.diff(gray, axis=1, prepend=gray[:, :1])
    gy = np.diff(gray, axis=0, prepend=gray[:1, :])
    grad_energy = gx**2 + gy**2

    means = np.zeros((_GRID, _GRID, 3))
    hists = np.zeros((_GRID, _GRID, _HIST_BINS))
    grads = np.zeros((_GRID, _GRID))
    edges = np.linspace(0.0, 1.0, _HIST_BINS + 1)
    for row in range(_GRID):
        for col in range(_GRID):
            ys = slice(row * cell_h, (row + 1) * cell_h)
            xs = slice(col * cell_w, (col + 1) * cell_w)
            means[row, col] = rgb[ys, xs].reshape(-1, 3).mean(axis=0)
            counts, _ = np.histogram(gray[ys, xs], bins=edges)
            hists[row, col] = counts / counts.sum()
            grads[row, col] = grad_energy[ys, xs].mean()

    vector = np.concatenate([means.ravel(), hists.ravel(), grads.ravel()])
    if vector.size < EMBEDDING_DIM:
        vector = np.pad(vector, (0, EMBEDDING_DIM - vector.size))
    return RawEmbedding(id=rec_id, vector=vector[:EMBEDDING_DIM])


@dataclass(frozen=True)
class AutoencoderConfig:
    """Training condition defaults for the embedding autoencoder."""

    input_dim: int = EMBEDDING_DIM
    hidden_units: int = 1028
    bottleneck_units: int = BOTTLENECK_DIM
    epochs: int = 100
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    holdout_fraction: float = 0.1
    seed: int = 0

    @property
    def widths(self) -> list[int]:
        return [
            self.input_dim,
            self.hidden_units,
            self.bottleneck_units,
            self.hidden_units,
            self.input_dim,
        ]


@dataclass
class AutoencoderModel:
    config: AutoencoderConfig
    params: _net.Params
    standardizer: _net.Standardizer
    train_losses: list[float] = field(default_factory=list)
    holdout_losses: list[float] = field(default_factory=list)

    @property
    def final_train_loss(self) -> float:
        return self.train_losses[-1]

    def save(self, path: str | Path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "autoencoder",
            "widths": self.config.widths,
            "activation": "tanh",
            "config": {
                "input_dim": self.config.input_dim,
                "hidden_units": self.config.hidden_units,
                "bottleneck_units": self.config.bottleneck_units,
                "epochs": self.config.epochs,
                "batch_size": self.config.batch_size,
                "lr": self.config.lr,
                "momentum": self.config.momentum,
                "holdout_fraction": self.config.holdout_fraction,
                "seed": self.config.seed,
            },
            "standardization": self.standardizer.to_jsonable(),
            "layers": _net.params_to_jsonable(self.params),
            "metrics": {
                "train_losses": self.train_losses,
                "holdout_losses": self.holdout_losses,
            },
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AutoencoderModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != MODEL_FORMAT or payload.get("kind") != "autoencoder":
            raise ValueError(f"not an autoencoder model file: {path}")
        config = AutoencoderConfig(**payload["config"])
        return cls(
            config=config,
            params=_net.params_from_jsonable(payload["layers"]),
            standardizer=_net.Standardizer.from_jsonable(payload["standardization"]),
            train_losses=payload["metrics"]["train_losses"],
            holdout_losses=payload["metrics"]["holdout_losses"],
        )


def _stack_vectors(data: Sequence[RawEmbedding] | np.ndarray, input_dim: int) -> np.ndarray:
    if isinstance(data, np.ndarray):
        matrix = np.asarray(data, dtype=float)
    else:
        matrix = np.stack([item.vector for item in data]).astype(float)
    if matrix.ndim != 2 or matrix.shape[1] != input_dim:
        raise EmbeddingError(f"expected (n, {input_dim}) embeddings, got {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise EmbeddingError("non-finite values in embedding data")
    return matrix


def train_autoencoder(
    data: Sequence[RawEmbedding] | np.ndarray,
    config: AutoencoderConfig = AutoencoderConfig(),
) -> AutoencoderModel:
    """Train the reconstruction autoencoder on standardized embeddings.

    The data is split 90/10 into train/holdout (holdout skipped when there is
    not at least one row for each side), shuffled every epoch with the run
    seed, and optimized with momentum SGD on per-element MSE.  Constant
    dimensions standardize to zero rather than erroring, so a degenerate
    dataset (every vector identical) trains to the trivial constant mapping.
    """
    matrix = _stack_vectors(data, config.input_dim)
    n = matrix.shape[0]
    if n < 2:
        raise EmbeddingError(f"need at least 2 embeddings to train, got {n}")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_holdout = int(round(n * config.holdout_fraction))
    if n_holdout < 1 or n - n_holdout < 1:
        n_holdout = 0
    holdout_idx, train_idx = order[:n_holdout], order[n_holdout:]

    standardizer = _net.Standardizer.fit(matrix[train_idx])
    x_train = standardizer.transform(matrix[train_idx])
    x_holdout = standardizer.transform(matrix[holdout_idx]) if n_holdout else None

    params = _net.glorot_init(config.widths, rng)
    optimizer = _net.MomentumSGD(params, lr=config.lr, momentum=config.momentum)

    train_losses: list[float] = []
    holdout_losses: list[float] = []
    for _ in range(config.epochs):
        for batch in _net.iter_minibatches(len(x_train), config.batch_size, rng):
            _, grads = _net.loss_and_grads(params, x_train[batch], x_train[batch], "tanh")
            optimizer.step(params, grads)
        residual = _net.forward(params, x_train, "tanh") - x_train
        train_losses.append(float(np.mean(residual**2)))
        if x_holdout is not None:
            residual = _net.forward(params, x_holdout, "tanh") - x_holdout
            holdout_losses.append(float(np.mean(residual**2)))

    return AutoencoderModel(
        config=config,
        params=params,
        standardizer=standardizer,
        train_losses=train_losses,
        holdout_losses=holdout_losses,
    )


def encode(model: AutoencoderModel, item: RawEmbedding | np.ndarray) -> BottleneckFeature | np.ndarray:
    """Bottleneck activations (second hidden layer) for one embedding."""
    if isinstance(item, RawEmbedding):
        vector = item.vector
        rec_id = item.id
    else:
        vector = np.asarray(item, dtype=float)
        rec_id = None
    if vector.shape != (model.config.input_dim,):
        raise EmbeddingError(
            f"expected {model.config.input_dim} values, got {vector.shape}"
        )
    x = model.standardizer.transform(vector[None, :])
    hidden = _net.hidden_activation(model.params, x, "tanh", layer=2)[0]
    if rec_id is None:
        return hidden
    return BottleneckFeature(id=rec_id, vector=hidden)


def encode_batch(model: AutoencoderModel, items: Sequence[RawEmbedding]) -> list[BottleneckFeature]:
    matrix = _stack_vectors(items, model.config.input_dim)
    hidden = _net.hidden_activation(
        model.params, model.standardizer.transform(matrix), "tanh", layer=2
    )
    return [
        BottleneckFeature(id=item.id, vector=row) for item, row in zip(items, hidden)
    ]


def reconstruct(model: AutoencoderModel, item: RawEmbedding | np.ndarray) -> np.ndarray:
    """Decoder output on the standardized scale (for reconstruction checks)."""
    vector = item.vector if isinstance(item, RawEmbedding) else np.asarray(item, dtype=float)
    x = model.standardizer.transform(vector[None, :])
    return _net.forward(model.params, x, "tanh")[0]
