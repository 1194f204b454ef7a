"""Desk-scale models with closed-form gradients over a flat parameter vector."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..core import InvalidInputError, SeededRng
from .data import Dataset


class ModelKind(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.LOGISTIC
    hidden: tuple[int, ...] = (32,)
    weight_decay: float = 1e-4
    init_scale: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ModelKind(str(self.kind.value if isinstance(self.kind, ModelKind)
                                                           else self.kind).lower()))
        except ValueError:
            raise InvalidInputError(f"unknown model kind {self.kind!r}") from None
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.weight_decay < 0 or self.init_scale < 0:
            raise InvalidInputError("weight_decay and init_scale must be nonnegative")
        if self.kind is ModelKind.MLP and (not self.hidden or min(self.hidden) < 1):
            raise InvalidInputError("an MLP needs at least one hidden layer of positive width")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Model:
    """Base class: subclasses define the parameter layout, forward pass and gradient."""

    num_params: int

    def init(self, rng: SeededRng, scale: float) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return self.loss_and_grad(w, X, y)[0]

    def score(self, w: np.ndarray, data: Dataset) -> float:
        """Accuracy for classifiers, coefficient of determination for regression."""
        pred = self.predict(w, data.X)
        if data.is_classification:
            return float(np.mean(pred == data.y))
        resid = np.sum((pred - data.y) ** 2)
        total = np.sum((data.y - data.y.mean()) ** 2)
        return float(1.0 - resid / total) if total > 0 else 0.0


class LinearModel(Model):
    """Least squares ``0.5 * mean((x.w + b - y)^2)``."""

    def __init__(self, dim: int):
        self.dim = dim
        self.num_params = dim + 1

    def init(self, rng, scale):
        w = np.zeros(self.num_params)
        if scale > 0:
            w[: self.dim] = rng.standard_normal(self.dim) * scale / np.sqrt(self.dim)
        return w

    def predict(self, w, X):
        return X @ w[: self.dim] + w[self.dim]

    def loss_and_grad(self, w, X, y):
        r = self.predict(w, X) - y
        m = X.shape[0]
        g = np.empty_like(w)
        g[: self.dim] = X.T @ r / m
        g[self.dim] = r.sum() / m
        return float(0.5 * np.mean(r * r)), g


class SoftmaxModel(Model):
    """Multinomial logistic regression, parameters ``[W (C x D) row-major, b (C)]``."""

    def __init__(self, dim: int, num_classes: int):
        self.dim = dim
        self.num_classes = num_classes
        self.num_params = num_classes * dim + num_classes

    def _unpack(self, w):
        c, d = self.num_classes, self.dim
        return w[: c * d].reshape(c, d), w[c * d:]

    def init(self, rng, scale):
        w = np.zeros(self.num_params)
        if scale > 0:
            c, d = self.num_classes, self.dim
            w[: c * d] = rng.standard_normal(c * d) * scale / np.sqrt(d)
        return w

    def logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W.T + b

    def predict(self, w, X):
        return np.argmax(self.logits(w, X), axis=1)

    def loss_and_grad(self, w, X, y):
        m = X.shape[0]
        logp = _log_softmax(self.logits(w, X))
        loss = -float(np.mean(logp[np.arange(m), y]))
        delta = np.exp(logp)
        delta[np.arange(m), y] -= 1.0
        delta /= m
        g = np.empty_like(w)
        c, d = self.num_classes, self.dim
        g[: c * d] = (delta.T @ X).ravel()
        g[c * d:] = delta.sum(axis=0)
        return loss, g


class MlpModel(Model):
    """tanh hidden layers with a softmax output; parameters are ``[W1, b1, W2, b2, ...]``."""

    def __init__(self, dim: int, hidden: tuple[int, ...], num_classes: int):
        self.sizes = (dim, *hidden, num_classes)
        self.shapes = [(self.sizes[i + 1], self.sizes[i]) for i in range(len(self.sizes) - 1)]
        self.num_params = sum(o * i + o for o, i in self.shapes)

    def _unpack(self, w):
        out, pos = [], 0
        for o, i in self.shapes:
            W = w[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = w[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def init(self, rng, scale):
        scale = scale if scale > 0 else 1.0
        w = np.zeros(self.num_params)
        pos = 0
        for o, i in self.shapes:
            w[pos:pos + o * i] = rng.standard_normal(o * i) * scale / np.sqrt(i)
            pos += o * i + o
        return w

    def _forward(self, w, X):
        layers = self._unpack(w)
        acts = [X]
        h = X
        for W, b in layers[:-1]:
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        W, b = layers[-1]
        return layers, acts, h @ W.T + b

    def predict(self, w, X):
        return np.argmax(self._forward(w, X)[2], axis=1)

    def loss_and_grad(self, w, X, y):
        m = X.shape[0]
        layers, acts, z = self._forward(w, X)
        logp = _log_softmax(z)
        loss = -float(np.mean(logp[np.arange(m), y]))
        delta = np.exp(logp)
        delta[np.arange(m), y] -= 1.0
        delta /= m
        grads = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a = acts[li]
            grads.append((delta.T @ a, delta.sum(axis=0)))
            if li > 0:
                delta = (delta @ W) * (1.0 - a * a)
        grads.reverse()
        return loss, np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def build_model(spec: ModelSpec, data: Dataset) -> Model:
    d = data.X.shape[1]
    if spec.kind is ModelKind.LINEAR:
        if data.is_classification:
            raise InvalidInputError("the linear model needs a regression dataset")
        return LinearModel(d)
    if not data.is_classification:
        raise InvalidInputError(f"the {spec.kind.value} model needs a classification dataset")
    if spec.kind is ModelKind.LOGISTIC:
        return SoftmaxModel(d, data.num_classes)
    return MlpModel(d, spec.hidden, data.num_classes)


def local_gradient(model: Model, w: np.ndarray, shard: Dataset, batch_size: int, rng: SeededRng,
                   weight_decay: float = 0.0) -> np.ndarray:
    """Mini-batch gradient on one worker's shard (batch drawn without replacement).

    A batch at least as large as the shard uses the whole shard in order.
    """
    size = len(shard)
    if size == 0:
        raise InvalidInputError("empty shard")
    if batch_size >= size:
        X, y = shard.X, shard.y
    else:
        idx = rng.choice(size, size=batch_size, replace=False)
        X, y = shard.X[idx], shard.y[idx]
    g = model.loss_and_grad(w, X, y)[1]
    if weight_decay:
        g = g + weight_decay * w
    return g
