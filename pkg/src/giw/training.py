"""Generalized importance weighting: validation split, model update, baselines.

The GIW objective on a step is

    alpha * mean_i(w_i * loss_i  over the training batch)
        + (1 - alpha) * mean_j(loss_j  over the OOT validation batch)

with ``w`` re-estimated on every batch by matching training and in-training
validation representations.  With no OOT data and ``alpha = 1`` this is
exactly the dynamic importance-weighting (DIW) step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import DomainError
from .kernels import KernelConfig
from .netcore import Mlp, OptimizerState, cross_entropy, forward, loss_and_grads, optimizer_step
from .osvm import SplitResult, osvm_fit, osvm_score, score_reference, split_validation
from .ratio import DEFAULT_BOUND, WeightVector, kmm_match, rulsif_fit, ulsif_eval
from .synth import Dataset

log = logging.getLogger(__name__)

METHODS = ("giw", "diw", "rdiw", "val_only", "pretrain_val")
BASELINES = ("val_only", "pretrain_val", "diw", "rdiw")
METRIC_FIELDS = ("epoch", "method", "seed", "test_acc", "obj_term1", "obj_term2", "alpha_hat")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "giw"
    epochs: int = 200
    pretrain_epochs: int = 10
    batch_size: int = 64
    n1: int = 16
    n2: int = 16
    oversample: float = 1.0
    hidden: tuple = (32, 32)
    lr: float = 5e-3
    decay_every: int = 100
    decay_factor: float = 0.1
    weight_decay: float = 5e-3
    representation: str = "loss"
    weight_bound: float = DEFAULT_BOUND
    normalize_weights: bool = True
    kernel: KernelConfig = KernelConfig()
    rdiw_eta: float = 0.5
    alpha_override: Optional[float] = None
    class_prior_shift: bool = False
    continue_from_pretrain: bool = True
    split_features: str = "input"
    osvm_nu: float = 0.2
    osvm_gamma: Union[float, str] = 40.0
    split_threshold: Union[float, str] = 0.4

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 1 or self.epochs < 1:
            raise DomainError("batch size and epochs must be >= 1")
        if self.n1 < 0 or self.n2 < 0 or self.pretrain_epochs < 0:
            raise DomainError("n1, n2 and pretrain_epochs must be >= 0")
        if self.oversample < 1:
            raise DomainError("oversample must be >= 1")
        if self.representation not in ("loss", "feature"):
            raise DomainError("representation must be 'loss' or 'feature'")
        if self.split_features not in ("input", "hidden"):
            raise DomainError("split_features must be 'input' or 'hidden'")
        if self.alpha_override is not None and not 0 <= self.alpha_override <= 1:
            raise DomainError("alpha_override must lie in [0, 1]")


def class_prior_shift_mode(config: TrainConfig, enabled: bool = True) -> TrainConfig:
    """Use all validation data in both terms with ``alpha = 0.5`` (no split)."""
    if enabled:
        return replace(config, class_prior_shift=True, alpha_override=0.5)
    return replace(config, class_prior_shift=False, alpha_override=None)


class CyclicSampler:
    """Draw indices without replacement, reshuffling after every full pass."""

    def __init__(self, n: int, rng):
        self.n = n
        self.rng = rng
        self._queue = np.empty(0, dtype=int)

    def draw(self, k: int) -> np.ndarray:
        if self.n == 0 or k == 0:
            return np.empty(0, dtype=int)
        out = []
        need = k
        while need > 0:
            if self._queue.size == 0:
                self._queue = self.rng.permutation(self.n)
            take = self._queue[:need]
            self._queue = self._queue[need:]
            out.append(take)
            need -= take.size
        return np.concatenate(out)


@dataclass
class StepRecord:
    epoch: int
    alpha: float
    weights: np.ndarray
    losses_tr: np.ndarray
    losses_v2: np.ndarray
    objective: float
    term1: float
    term2: float


@dataclass
class TrainResult:
    model: Mlp
    method: str
    seed: int
    metrics: list = field(default_factory=list)
    split: Optional[SplitResult] = None
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def last_accuracy(self, k: int = 10) -> float:
        accs = [m["test_acc"] for m in self.metrics[-k:]]
        return float(np.mean(accs)) if accs else float("nan")


def step_objective(weights, losses_tr, losses_v2, alpha: float):
    """Mini-batch GIW objective and its two terms."""
    weights = np.asarray(weights, float)
    losses_tr = np.asarray(losses_tr, float)
    losses_v2 = np.asarray(losses_v2, float)
    t1 = alpha * float(np.mean(weights * losses_tr)) if len(losses_tr) else 0.0
    t2 = (1 - alpha) * float(np.mean(losses_v2)) if len(losses_v2) else 0.0
    return t1 + t2, t1, t2


def empirical_giw_objective(weights, losses_tr, losses_v2, n_v1: int, n_v: int) -> float:
    """Full-data objective ``n_v1/(n_v n_tr) sum w l + (1/n_v) sum_{OOT} l``."""
    weights = np.asarray(weights, float)
    losses_tr = np.asarray(losses_tr, float)
    n_tr = len(losses_tr)
    return float(n_v1 / (n_v * n_tr) * np.sum(weights * losses_tr)
                 + np.sum(np.asarray(losses_v2, float)) / n_v)


def _representation(model: Mlp, X, y, kind: str) -> np.ndarray:
    if kind == "loss":
        return cross_entropy(forward(model, X), y)[:, None]
    return model.hidden(X, normalize=True)


def kmm_weights(config: TrainConfig) -> Callable:
    def fn(Ztr, Zv):
        return kmm_match(Ztr, Zv, config.kernel, config.weight_bound)
    return fn


def rulsif_weights(config: TrainConfig) -> Callable:
    def fn(Ztr, Zv):
        model = rulsif_fit(Ztr, Zv, eta=config.rdiw_eta, config=config.kernel, seed=0)
        w = np.clip(ulsif_eval(model, Ztr), 0.0, config.weight_bound)
        return WeightVector(w, config.weight_bound)
    return fn


def _accuracy(model: Mlp, data: Optional[Dataset]) -> float:
    if data is None or len(data) == 0:
        return float("nan")
    return float(np.mean(model.predict(data.X) == data.y))


def _optimizer(config: TrainConfig) -> OptimizerState:
    return OptimizerState(lr=config.lr, weight_decay=config.weight_decay,
                          decay_every=config.decay_every, decay_factor=config.decay_factor)


def _steps_per_epoch(n_tr: int, m: int) -> int:
    return max(1, math.ceil(n_tr / m))


def _val_batch_size(n_avail: int, cap: int, steps: int, oversample: float) -> int:
    if n_avail == 0 or cap == 0:
        return 0
    size = min(n_avail, cap)
    # enough draws per epoch to pass over the set ``oversample`` times
    return max(size, math.ceil(oversample * n_avail / steps))


def erm(model: Mlp, data: Dataset, epochs: int, config: TrainConfig, rng,
        steps_per_epoch: Optional[int] = None, test: Optional[Dataset] = None,
        method: str = "erm", seed: int = 0, result: Optional[TrainResult] = None) -> TrainResult:
    """Unweighted training on ``data`` (pretraining and the validation-only baselines)."""
    result = result or TrainResult(model, method, seed)
    if epochs == 0 or len(data) == 0:
        return result
    state = _optimizer(config)
    m = min(config.batch_size, len(data))
    steps = steps_per_epoch or _steps_per_epoch(len(data), m)
    sampler = CyclicSampler(len(data), rng)
    for epoch in range(epochs):
        term = 0.0
        for _ in range(steps):
            idx = sampler.draw(m)
            coef = np.full(len(idx), 1.0 / len(idx))
            loss, grads = loss_and_grads(model, data.X[idx], data.y[idx], coef)
            optimizer_step(model, grads, state, epoch)
            term += loss
        if test is not None:
            result.metrics.append(_metric_row(epoch, method, seed, _accuracy(model, test),
                                              term / steps, 0.0, float("nan")))
    return result


def _metric_row(epoch, method, seed, acc, t1, t2, alpha):
    return {"epoch": epoch, "method": method, "seed": seed, "test_acc": acc,
            "obj_term1": t1, "obj_term2": t2, "alpha_hat": alpha}


def pretrain(model: Mlp, Dtr: Dataset, config: TrainConfig, rng) -> Mlp:
    erm(model, Dtr, config.pretrain_epochs, config, rng)
    return model


def split_features(model: Mlp, X, kind: str) -> np.ndarray:
    return np.asarray(X, float) if kind == "input" else model.hidden(X, normalize=True)


def val_data_split(model: Mlp, Dtr: Dataset, Dv: Dataset, config: TrainConfig) -> SplitResult:
    """Score validation points with a one-class SVM fitted on the training data.

    The model is assumed to be pretrained already when ``split_features`` is
    ``"hidden"``.  Scores are rescaled against the far-field score and the
    top training score before thresholding.
    """
    if len(Dv) == 0:
        raise DomainError("validation set is empty")
    Ztr = split_features(model, Dtr.X, config.split_features)
    Zv = split_features(model, Dv.X, config.split_features)
    svm = osvm_fit(Ztr, config.osvm_nu, config.osvm_gamma)
    scores = osvm_score(svm, Zv)
    return split_validation(scores, config.split_threshold, score_reference(svm, Ztr))


def model_update(model: Mlp, Dtr: Dataset, Dv1: Dataset, Dv2: Dataset, alpha_hat: float,
                 config: TrainConfig, rng, weight_fn: Optional[Callable] = None,
                 test: Optional[Dataset] = None, method: str = "giw", seed: int = 0,
                 record_steps: bool = False, snapshots: bool = False) -> TrainResult:
    """Run ``config.epochs`` epochs of GIW updates (one epoch = one pass over ``Dtr``)."""
    weight_fn = weight_fn or kmm_weights(config)
    result = TrainResult(model, method, seed)
    state = _optimizer(config)
    m = min(config.batch_size, len(Dtr))
    steps = _steps_per_epoch(len(Dtr), m)
    n1 = _val_batch_size(len(Dv1), config.n1, steps, config.oversample)
    n2 = _val_batch_size(len(Dv2), config.n2, steps, config.oversample)
    use_train = len(Dv1) > 0 and alpha_hat > 0
    if not use_train:
        msg = "no in-training validation data; optimising the OOT term only"
        log.warning(msg)
        result.warnings.append(msg)
    s1, s2 = CyclicSampler(len(Dv1), rng), CyclicSampler(len(Dv2), rng)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(Dtr))
        t1_sum = t2_sum = 0.0
        for b in range(steps):
            idx = perm[b * m:(b + 1) * m] if use_train else np.empty(0, dtype=int)
            v1 = s1.draw(n1) if use_train else np.empty(0, dtype=int)
            v2 = s2.draw(n2)
            Xtr, ytr = Dtr.X[idx], Dtr.y[idx]
            if len(idx):
                Ztr = _representation(model, Xtr, ytr, config.representation)
                Zv = _representation(model, Dv1.X[v1], Dv1.y[v1], config.representation)
                wv = weight_fn(Ztr, Zv)
                w = wv.normalized() if config.normalize_weights else wv.weights
            else:
                w = np.empty(0)
            coef_tr = alpha_hat * w / max(len(idx), 1)
            coef_v2 = np.full(len(v2), (1 - alpha_hat) / max(len(v2), 1))
            X = np.vstack([Xtr, Dv2.X[v2]])
            y = np.concatenate([ytr, Dv2.y[v2]])
            coef = np.concatenate([coef_tr, coef_v2])
            if len(y) == 0:
                continue
            obj, grads = loss_and_grads(model, X, y, coef)
            losses = cross_entropy(forward(model, X), y)
            _, t1, t2 = step_objective(w, losses[:len(idx)], losses[len(idx):], alpha_hat)
            t1_sum += t1
            t2_sum += t2
            if record_steps:
                result.steps.append(StepRecord(epoch, alpha_hat, w.copy(), losses[:len(idx)],
                                               losses[len(idx):], obj, t1, t2))
            optimizer_step(model, grads, state, epoch)
        result.metrics.append(_metric_row(epoch, method, seed, _accuracy(model, test),
                                          t1_sum / steps, t2_sum / steps, alpha_hat))
        if snapshots:
            result.snapshots.append([p.copy() for p in model.params()])
    return result


def _streams(seed):
    init, pre, main = np.random.SeedSequence(seed).spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(pre), np.random.default_rng(main)


def _init_model(config: TrainConfig, d: int, n_classes: int, seed: int) -> Mlp:
    return Mlp.init([d, *config.hidden, n_classes], seed=seed)


def _subset(data: Dataset, idx, tag: str) -> Dataset:
    return Dataset(data.X[idx], data.y[idx], tag)


def train(Dtr: Dataset, Dv: Dataset, config: TrainConfig = TrainConfig(), seed: int = 0,
          test: Optional[Dataset] = None, n_classes: Optional[int] = None,
          split: Optional[SplitResult] = None, record_steps: bool = False,
          snapshots: bool = False) -> TrainResult:
    """Train one model with ``config.method``.

    Parameters
    ----------
    Dtr, Dv : Dataset
        Training data and the (small) validation set drawn from the test
        distribution.
    seed : int
        Drives initialisation, pretraining batches and main-phase batches
        through independent streams.
    test : Dataset, optional
        Evaluated after every epoch for the ``test_acc`` metric.
    split : SplitResult, optional
        Force the IT/OOT partition of ``Dv`` instead of estimating it.
    """
    method = config.method
    if len(Dtr) == 0:
        raise DomainError("training set is empty")
    if len(Dv) == 0:
        raise DomainError("validation set is empty")
    C = n_classes or int(max(Dtr.y.max(), Dv.y.max())) + 1
    init_seed, pre_rng, rng = _streams(seed)
    model = _init_model(config, Dtr.X.shape[1], C, init_seed)

    if method == "val_only":
        steps = _steps_per_epoch(len(Dtr), config.batch_size)
        return erm(model, Dv, config.epochs, config, rng, steps, test, method, seed)

    pretrain(model, Dtr, config, pre_rng)
    if not config.continue_from_pretrain and method != "giw":
        model = _init_model(config, Dtr.X.shape[1], C, init_seed)

    if method == "pretrain_val":
        steps = _steps_per_epoch(len(Dtr), config.batch_size)
        return erm(model, Dv, config.epochs, config, rng, steps, test, method, seed)

    empty = _subset(Dv, np.empty(0, dtype=int), "v2")
    if method in ("diw", "rdiw"):
        fn = rulsif_weights(config) if method == "rdiw" else kmm_weights(config)
        return model_update(model, Dtr, Dv, empty, 1.0, config, rng, fn, test, method, seed,
                            record_steps, snapshots)

    # giw
    if config.class_prior_shift:
        Dv1, Dv2, alpha = Dv, Dv, 0.5
        split = None
    else:
        if split is None:
            split = val_data_split(model, Dtr, Dv, config)
        Dv1 = _subset(Dv, split.it_idx, "v1")
        Dv2 = _subset(Dv, split.oot_idx, "v2")
        alpha = split.alpha_hat
    if config.alpha_override is not None:
        alpha = config.alpha_override
    if not config.continue_from_pretrain:
        model = _init_model(config, Dtr.X.shape[1], C, init_seed)
    result = model_update(model, Dtr, Dv1, Dv2, alpha, config, rng, None, test, method, seed,
                          record_steps, snapshots)
    result.split = split
    return result


def train_baseline(method: str, Dtr: Dataset, Dv: Dataset, config: TrainConfig = TrainConfig(),
                   seed: int = 0, test: Optional[Dataset] = None, **kw) -> TrainResult:
    """Train one of the reference methods: val_only, pretrain_val, diw or rdiw."""
    if method not in BASELINES:
        raise DomainError(f"unknown baseline {method!r}; expected one of {BASELINES}")
    return train(Dtr, Dv, replace(config, method=method), seed, test, **kw)
