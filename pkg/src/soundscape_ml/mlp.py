"""Multi-layer-perceptron regressor trained with mini-batch Adam.

All hidden layers share one width, activations are ReLU (configurable), the
output layer is linear, and the objective is MSE plus an l2 weight penalty.
Inputs are standardized with training-set statistics; targets are trained
unscaled.  Training is single-threaded and bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _net

MODEL_FORMAT = "soundscape-ml-net"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MLPConfig:
    hidden_layers: int = 1
    units: int = 32
    l2: float = 1e-3
    activation: str = "relu"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    early_stopping: bool = True
    validation_fraction: float = 0.1
    patience: int = 20

    def __post_init__(self) -> None:
        if not 1 <= self.hidden_layers <= 10:
            raise ValueError(f"hidden_layers out of range 1..10: {self.hidden_layers}")
        if self.units < 1:
            raise ValueError(f"units must be positive: {self.units}")
        if self.activation not in _net.ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class MLPModel:
    config: MLPConfig
    params: _net.Params
    standardizer: _net.Standardizer
    input_dim: int
    output_dim: int
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)

    def widths(self) -> list[int]:
        return [self.input_dim] + [self.config.units] * self.config.hidden_layers + [self.output_dim]

    def save(self, path: str | Path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "mlp",
            "widths": self.widths(),
            "activation": self.config.activation,
            "config": {
                "hidden_layers": self.config.hidden_layers,
                "units": self.config.units,
                "l2": self.config.l2,
                "lr": self.config.lr,
                "epochs": self.config.epochs,
                "batch_size": self.config.batch_size,
                "seed": self.config.seed,
            },
            "standardization": self.standardizer.to_jsonable(),
            "layers": _net.params_to_jsonable(self.params),
            "metrics": {
                "loss_history": self.loss_history,
                "val_history": self.val_history,
            },
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MLPModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != MODEL_FORMAT or payload.get("kind") != "mlp":
            raise ValueError(f"not an MLP model file: {path}")
        cfg_raw = payload["config"]
        config = MLPConfig(
            hidden_layers=cfg_raw["hidden_layers"],
            units=cfg_raw["units"],
            l2=cfg_raw["l2"],
            lr=cfg_raw["lr"],
            epochs=cfg_raw["epochs"],
            batch_size=cfg_raw["batch_size"],
            seed=cfg_raw["seed"],
            activation=payload["activation"],
        )
        widths = payload["widths"]
        return cls(
            config=config,
            params=_net.params_from_jsonable(payload["layers"]),
            standardizer=_net.Standardizer.from_jsonable(payload["standardization"]),
            input_dim=widths[0],
            output_dim=widths[-1],
            loss_history=payload["metrics"]["loss_history"],
            val_history=payload["metrics"]["val_history"],
        )


def _validate_training_data(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty training data")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"X has {x.shape[0]} rows but Y has {y.shape[0]}")
    if not np.isfinite(x).all() or not np.isfinite(y).all():
        raise ValueError("training data contains non-finite values")
    return x, y


def fit(config: MLPConfig, x: np.ndarray, y: np.ndarray) -> MLPModel:
    """Train a regressor on (x, y) with mini-batch Adam.

    With early stopping enabled, a seeded 10% tail of the shuffled data is
    held out and the parameters with the best held-out loss are restored once
    ``patience`` epochs pass without improvement.  Datasets too small to
    spare a holdout row train for the full epoch budget.
    """
    x, y = _validate_training_data(x, y)
    n, d = x.shape
    m = y.shape[1]

    rng = np.random.default_rng(config.seed)
    standardizer = _net.Standardizer.fit(x)
    xs = standardizer.transform(x)

    n_val = int(round(n * config.validation_fraction)) if config.early_stopping else 0
    if n_val < 1 or n - n_val < 1:
        n_val = 0
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = xs[train_idx], y[train_idx]
    x_val, y_val = xs[val_idx], y[val_idx]

    widths = [d] + [config.units] * config.hidden_layers + [m]
    params = _net.glorot_init(widths, rng)
    optimizer = _net.AdamOptimizer(
        params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps
    )

    loss_history: list[float] = []
    val_history: list[float] = []
    best_val = np.inf
    best_params: _net.Params | None = None
    stale = 0
    for _ in range(config.epochs):
        for batch in _net.iter_minibatches(len(x_train), config.batch_size, rng):
            _, grads = _net.loss_and_grads(
                params, x_train[batch], y_train[batch], config.activation, config.l2
            )
            optimizer.step(params, grads)
        epoch_loss, _ = _net.loss_and_grads(params, x_train, y_train, config.activation, config.l2)
        loss_history.append(epoch_loss)
        if n_val:
            residual = _net.forward(params, x_val, config.activation) - y_val
            val_loss = float(np.mean(residual**2))
            val_history.append(val_loss)
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_params = [(w.copy(), b.copy()) for w, b in params]
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break
    if best_params is not None:
        params = best_params

    return MLPModel(
        config=config,
        params=params,
        standardizer=standardizer,
        input_dim=d,
        output_dim=m,
        loss_history=loss_history,
        val_history=val_history,
    )


def predict(model: MLPModel, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; callers clamp at reporting time if needed."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValueError(
            f"expected {model.input_dim} input columns, got {x.shape[1]}"
        )
    out = _net.forward(model.params, model.standardizer.transform(x), model.config.activation)
    return out[0] if squeeze else out


def check_gradients(
    config: MLPConfig,
    sample: tuple[np.ndarray, np.ndarray] | None = None,
    input_dim: int = 4,
    output_dim: int = 1,
    seed: int = 0,
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central finite differences.

    Only sensible for tiny networks (the finite-difference sweep visits every
    parameter twice).  For ReLU the sample is nudged until no pre-activation
    sits within the finite-difference step of a kink, where the comparison is
    undefined (the subgradient there is taken as 0).
    """
    rng = np.random.default_rng(seed)
    if sample is None:
        x = rng.normal(size=(3, input_dim))
        y = rng.normal(size=(3, output_dim))
    else:
        x, y = sample
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))

    widths = [x.shape[1]] + [config.units] * config.hidden_layers + [y.shape[1]]
    n_params = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    if n_params > 100:
        raise ValueError(f"gradient check is for tiny networks, got {n_params} parameters")

    params = _net.glorot_init(widths, rng)
    if config.activation == "relu":
        for _ in range(50):
            if _min_preactivation(params, x, config.activation) > 10.0 * h:
                break
            x = x + rng.normal(scale=0.1, size=x.shape)
        else:
            raise RuntimeError("could not move sample away from ReLU kinks")

    _, analytic = _net.loss_and_grads(params, x, y, config.activation, config.l2)
    numeric = _net.finite_difference_grads(
        lambda p: _net.loss_and_grads(p, x, y, config.activation, config.l2)[0], params, h=h
    )
    return _net.max_relative_grad_error(analytic, numeric)


def _min_preactivation(params: _net.Params, x: np.ndarray, activation: str) -> float:
    act, _ = _net.ACTIVATIONS[activation]
    a = x
    smallest = np.inf
    for w, b in params[:-1]:
        z = a @ w + b
        smallest = min(smallest, float(np.min(np.abs(z))))
        a = act(z)
    return smallest
