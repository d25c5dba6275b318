"""Shared dense-network machinery: init, forward/backward, optimizers, I/O.

Both trainable models in this package (the impression/sound-source regressor
and the embedding autoencoder) are plain fully-connected stacks with a linear
output layer, trained on mean-squared error.  This module holds the numerics
they share; the public model classes add their configs and training loops.

Conventions: X is (n, d) row-major, layer l computes z_l = a_{l-1} W_l + b_l,
MSE is averaged over all n*m output elements, and the optional l2 penalty is
l2 * sum(W**2) over weight matrices (biases excluded).
"""

from __future__ import annotations

import numpy as np

Params = list[tuple[np.ndarray, np.ndarray]]  # [(W, b), ...] with W (d_in, d_out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(z: np.ndarray) -> np.ndarray:
    # Subgradient at the kink is taken as 0.
    return (z > 0.0).astype(z.dtype)


ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
}


def glorot_init(widths: list[int] | tuple[int, ...], rng: np.random.Generator) -> Params:
    """Uniform +/- sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    params: Params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        params.append((w, b))
    return params


def forward(params: Params, x: np.ndarray, activation: str) -> np.ndarray:
    """Forward pass returning the linear outputs of the last layer."""
    act, _ = ACTIVATIONS[activation]
    a = x
    last = len(params) - 1
    for idx, (w, b) in enumerate(params):
        z = a @ w + b
        a = z if idx == last else act(z)
    return a


def hidden_activation(params: Params, x: np.ndarray, activation: str, layer: int) -> np.ndarray:
    """Activations of hidden layer ``layer`` (1-based) for input ``x``."""
    act, _ = ACTIVATIONS[activation]
    a = x
    for idx in range(layer):
        w, b = params[idx]
        a = act(a @ w + b)
    return a


def loss_and_grads(
    params: Params,
    x: np.ndarray,
    y: np.ndarray,
    activation: str,
    l2: float = 0.0,
) -> tuple[float, Params]:
    """MSE (+ l2 weight penalty) and its gradient via backprop."""
    act, act_grad = ACTIVATIONS[activation]
    last = len(params) - 1
    zs: list[np.ndarray] = []
    activations: list[np.ndarray] = [x]
    a = x
    for idx, (w, b) in enumerate(params):
        z = a @ w + b
        zs.append(z)
        a = z if idx == last else act(z)
        activations.append(a)

    n_elems = y.shape[0] * y.shape[1]
    residual = activations[-1] - y
    loss = float(np.mean(residual**2))
    if l2:
        loss += l2 * sum(float(np.sum(w**2)) for w, _ in params)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params)  # type: ignore[list-item]
    delta = 2.0 * residual / n_elems  # dLoss/dz for the linear output layer
    for idx in range(last, -1, -1):
        w, _ = params[idx]
        gw = activations[idx].T @ delta
        if l2:
            gw = gw + 2.0 * l2 * w
        gb = delta.sum(axis=0)
        grads[idx] = (gw, gb)
        if idx > 0:
            delta = (delta @ w.T) * act_grad(zs[idx - 1])
    return loss, grads


def finite_difference_grads(loss_fn, params: Params, h: float = 1e-5) -> Params:
    """Central finite differences of ``loss_fn(params)`` for every parameter."""
    grads: Params = []
    for layer, (w, b) in enumerate(params):
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for arr, grad in ((w, gw), (b, gb)):
            flat = arr.ravel()
            gflat = grad.ravel()
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                hi = loss_fn(params)
                flat[i] = original - h
                lo = loss_fn(params)
                flat[i] = original
                gflat[i] = (hi - lo) / (2.0 * h)
        grads.append((gw, gb))
    return grads


def max_relative_grad_error(analytic: Params, numeric: Params) -> float:
    """max |a - n| / max(|a|, |n|, 1e-8) over all parameters."""
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class AdamOptimizer:
    """Adam with bias correction (Kingma-Ba defaults unless overridden)."""

    def __init__(
        self,
        params: Params,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for idx, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = self.m[idx]
            vw, vb = self.v[idx]
            mw[:] = self.beta1 * mw + (1.0 - self.beta1) * gw
            mb[:] = self.beta1 * mb + (1.0 - self.beta1) * gb
            vw[:] = self.beta2 * vw + (1.0 - self.beta2) * gw**2
            vb[:] = self.beta2 * vb + (1.0 - self.beta2) * gb**2
            w -= self.lr * (mw / c1) / (np.sqrt(vw / c2) + self.eps)
            b -= self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps)


class MomentumSGD:
    """Classical momentum: v = mu*v - lr*g; p += v."""

    def __init__(self, params: Params, lr: float = 0.01, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    def step(self, params: Params, grads: Params) -> None:
        for idx, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            vw, vb = self.velocity[idx]
            vw[:] = self.momentum * vw - self.lr * gw
            vb[:] = self.momentum * vb - self.lr * gb
            w += vw
            b += vb


class Standardizer:
    """Per-dimension (x - mean) / std using training-set statistics.

    Dimensions with zero variance standardize with std 1 so constant columns
    map to zero instead of NaN.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean=mean, std=std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_jsonable(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_jsonable(cls, payload: dict) -> "Standardizer":
        return cls(mean=np.array(payload["mean"]), std=np.array(payload["std"]))


def params_to_jsonable(params: Params) -> list[dict]:
    return [
        {"weights": w.tolist(), "bias": b.tolist()}  # row-major: weights[i][j] = W[i, j]
        for w, b in params
    ]


def params_from_jsonable(payload: list[dict]) -> Params:
    return [
        (np.array(layer["weights"], dtype=float), np.array(layer["bias"], dtype=float))
        for layer in payload
    ]


def iter_minibatches(
    n: int, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled minibatch index blocks; the last partial batch is kept."""
    order = rng.permutation(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]
