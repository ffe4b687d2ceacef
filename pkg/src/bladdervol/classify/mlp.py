"""Fully connected network with ReLU hidden layers and sigmoid outputs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import PreconditionError
from .data import N_CLASSES, DimensionMismatch, DivergedLoss, check_classes, one_hot

HIDDEN = (8, 8, 8, 8, 8, 8)


def default_arch(n_features: int) -> tuple[int, ...]:
    return (n_features, *HIDDEN, N_CLASSES)


@dataclass(frozen=True)
class MlpModel:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def arch(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    def scores(self, X) -> np.ndarray:
        """Sigmoid output per class, shape (n, 4)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return _sigmoid(forward(self, X)[-1])

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def init_mlp(arch, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    arch = tuple(int(a) for a in arch)
    if len(arch) < 2 or min(arch) < 1:
        raise PreconditionError(f"invalid architecture {arch}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpModel(tuple(ws), tuple(bs))


def forward(model: MlpModel, X) -> list[np.ndarray]:
    """Activations of every layer; the last entry holds the output logits."""
    acts = [np.asarray(X, dtype=float)]
    n_layers = len(model.weights)
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        acts.append(z if k == n_layers - 1 else np.maximum(z, 0.0))
    return acts


def loss(model: MlpModel, X, Y) -> float:
    """Binary cross-entropy summed over outputs, averaged over rows."""
    z = forward(model, X)[-1]
    return float((_softplus(z) - Y * z).sum() / z.shape[0])


def loss_and_grad(model: MlpModel, X, Y):
    """Loss and its gradient; gradients come back as (dW, db) per layer."""
    acts = forward(model, X)
    z = acts[-1]
    n = z.shape[0]
    value = float((_softplus(z) - Y * z).sum() / n)
    delta = (_sigmoid(z) - Y) / n
    gW, gb = [], []
    for k in range(len(model.weights) - 1, -1, -1):
        gW.append(acts[k].T @ delta)
        gb.append(delta.sum(axis=0))
        if k:
            delta = (delta @ model.weights[k].T) * (acts[k] > 0)
    return value, gW[::-1], gb[::-1]


def train_mlp(
    ds,
    arch=None,
    epochs: int = 500,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: int = 32,
) -> tuple[MlpModel, float]:
    """Plain mini-batch gradient descent; returns (model, final training loss).

    Rows are reshuffled every epoch with a generator seeded by ``seed``, so
    the run is reproducible.
    """
    X = np.asarray(ds.X, dtype=float)
    y = np.asarray(ds.y, dtype=int)
    check_classes(y)
    arch = default_arch(X.shape[1]) if arch is None else tuple(arch)
    if arch[0] != X.shape[1] or arch[-1] != N_CLASSES:
        raise PreconditionError(f"architecture {arch} does not fit {X.shape[1]} inputs / {N_CLASSES} outputs")
    if lr < 0 or epochs < 0 or batch_size < 1:
        raise PreconditionError("lr, epochs must be >= 0 and batch_size >= 1")
    model = init_mlp(arch, seed)
    Y = one_hot(y)
    Ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    rng = np.random.default_rng(seed + 1)
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            cur = MlpModel(tuple(Ws), tuple(bs))
            value, gW, gb = loss_and_grad(cur, X[idx], Y[idx])
            if not np.isfinite(value):
                raise DivergedLoss(f"loss became {value} in epoch {epoch}")
            for k in range(len(Ws)):
                Ws[k] -= lr * gW[k]
                bs[k] -= lr * gb[k]
    final = MlpModel(tuple(Ws), tuple(bs))
    final_loss = loss(final, X, Y)
    if not np.isfinite(final_loss):
        raise DivergedLoss(f"final loss {final_loss}")
    return final, final_loss


def numeric_gradient(model: MlpModel, X, Y, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``loss`` for every parameter array."""
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss(model, X, Y)
            p[i] = old - h
            dn = loss(model, X, Y)
            p[i] = old
            g[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads
