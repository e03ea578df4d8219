"""Small fully-connected classifier with exact backprop and an AdamW optimizer.

Everything is plain numpy in float64.  Parameters are stored as two lists,
``weights[l]`` of shape ``(dims[l+1], dims[l])`` and ``biases[l]`` of shape
``(dims[l+1],)``; gradients use the same layout.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError


@dataclass
class Mlp:
    """ReLU network ``dims[0] -> ... -> dims[-1]`` with an identity output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {l}: weight {W.shape} / bias {b.shape} mismatch")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} input {W.shape[1]} != previous output "
                                 f"{self.weights[l - 1].shape[0]}")

    @classmethod
    def init(cls, dims: Sequence[int], seed: int = 0) -> "Mlp":
        """He-normal weights, zero biases."""
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"invalid layer dims {dims}")
        rng = np.random.default_rng(seed)
        weights = [rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
                   for d_in, d_out in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(d_out) for d_out in dims[1:]]
        return cls(weights, biases)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "Mlp":
        return cls([np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
                   [np.zeros(o) for o in dims[1:]])

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def __call__(self, X) -> np.ndarray:
        return forward(self, X)

    def predict(self, X) -> np.ndarray:
        return np.argmax(forward(self, X), axis=1)

    def hidden(self, X, normalize: bool = True) -> np.ndarray:
        """Last hidden-layer activations, optionally L2-normalised per row."""
        _, acts = _forward_cached(self, X)
        H = acts[-1]
        if normalize:
            norms = np.linalg.norm(H, axis=1, keepdims=True)
            H = H / np.where(norms > 0, norms, 1.0)
        return H


def _as_batch(model: Mlp, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ShapeError(f"batch of shape {X.shape} does not match input dim {model.dims[0]}")
    return X


def _forward_cached(model: Mlp, X):
    X = _as_batch(model, X)
    acts = [X]
    h = X
    n_layers = len(model.weights)
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        h = z if l == n_layers - 1 else np.maximum(z, 0.0)
        if l < n_layers - 1:
            acts.append(h)
    return h, acts


def forward(model: Mlp, X) -> np.ndarray:
    """Logits, one row per example."""
    return _forward_cached(model, X)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(int)
    if n and (y.min() < 0 or y.max() >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes})")
    return y


def cross_entropy(logits, labels) -> np.ndarray:
    """Per-example ``-log softmax(logits)[label]`` via log-sum-exp."""
    logits = np.asarray(logits, dtype=float)
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(y)), y]


def weighted_cross_entropy(logits, labels, weights):
    """Weighted mean cross-entropy ``(1/n) sum_i w_i CE_i``.

    Returns ``(loss, dlogits)`` where ``dlogits`` is the exact gradient of the
    loss with respect to the logits.  Parameter gradients come from
    :func:`loss_and_grads`.
    """
    logits = np.asarray(logits, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = logits.shape[0]
    if w.shape != (n,):
        raise ShapeError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return _coef_loss(logits, labels, w / n)


def _coef_loss(logits, labels, coef):
    # sum_i coef_i * CE_i and its gradient wrt the logits
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    ce = cross_entropy(logits, y)
    loss = float(np.dot(coef, ce))
    d = softmax(logits)
    d[np.arange(len(y)), y] -= 1.0
    return loss, d * coef[:, None]


def backward(model: Mlp, acts, dlogits) -> list[np.ndarray]:
    """Backpropagate ``dlogits`` through the cached activations."""
    grads_W = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    delta = dlogits
    for l in range(len(model.weights) - 1, -1, -1):
        grads_W[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * (acts[l] > 0)
    out = []
    for gW, gb in zip(grads_W, grads_b):
        out += [gW, gb]
    return out


def loss_and_grads(model: Mlp, X, labels, coef):
    """Loss ``sum_i coef_i * CE_i`` and its gradients in ``model.params()`` order.

    ``coef`` are the per-example multipliers already including any
    normalisation (``w_i / n`` for a weighted mean).
    """
    logits, acts = _forward_cached(model, X)
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (logits.shape[0],):
        raise ShapeError(f"expected {logits.shape[0]} coefficients, got {coef.shape}")
    loss, dlogits = _coef_loss(logits, labels, coef)
    return loss, backward(model, acts, dlogits)


def weighted_loss_and_grads(model: Mlp, X, labels, weights):
    """Convenience wrapper: weighted mean cross-entropy and parameter gradients."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return loss_and_grads(model, X, labels, w / max(n, 1))


def grad_check(model: Mlp, X, labels, weights, epsilon: float = 1e-5) -> float:
    """Worst relative error between backprop and central finite differences.

    The relative error of one coordinate is ``|a - fd| / (|a| + 1e-8)``.  When
    both gradients vanish identically the error is 0.
    """
    if not 0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    probe = model.copy()
    _, analytic = weighted_loss_and_grads(probe, X, labels, weights)
    worst = 0.0
    for p, g in zip(probe.params(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp, _ = weighted_loss_and_grads(probe, X, labels, weights)
            flat[k] = orig - epsilon
            lm, _ = weighted_loss_and_grads(probe, X, labels, weights)
            flat[k] = orig
            fd = (lp - lm) / (2 * epsilon)
            err = abs(gflat[k] - fd) / (abs(gflat[k]) + 1e-8)
            worst = max(worst, err)
    return worst


@dataclass
class OptimizerState:
    """AdamW state with an epoch-indexed step decay of the learning rate."""

    lr: float = 5e-4
    weight_decay: float = 0.0
    decay_every: int = 100
    decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def lr_at(self, epoch: int) -> float:
        if self.decay_every <= 0:
            return self.lr
        return self.lr * self.decay_factor ** (epoch // self.decay_every)


def optimizer_step(model: Mlp, grads, state: OptimizerState, epoch: int = 0):
    """One AdamW update in place; returns ``(model, state)`` for chaining."""
    params = model.params()
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match parameter list")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    lr = state.lr_at(epoch)
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= lr * update
    return model, state
