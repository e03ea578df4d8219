"""One-class SVM (nu-formulation) solved by SMO, and the IT/OOT validation split.

The dual is

    min_a  0.5 a'Ka   s.t.  sum(a) = 1,  0 <= a_i <= 1/(nu n)

and the decision function is ``g(z) = sum_i a_i k(x_i, z) - rho``.  Points
with ``g > 0`` are inside the estimated training support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ShapeError
from .kernels import _as_matrix, median_heuristic, rbf_gram

_TAU = 1e-12


@dataclass(frozen=True)
class OsvmModel:
    support_vectors: np.ndarray
    coef: np.ndarray
    rho: float
    nu: float
    gamma: float
    n_train: int
    kkt: float = 0.0
    iterations: int = 0

    @property
    def upper(self) -> float:
        return 1.0 / (self.nu * self.n_train)

    def decision_function(self, Z) -> np.ndarray:
        return osvm_score(self, Z)


def _smo(K: np.ndarray, C: float, tol: float, max_iter: int):
    n = len(K)
    # feasible start: fill coordinates up to the box bound in order
    a = np.zeros(n)
    remaining = 1.0
    for i in range(n):
        a[i] = min(C, remaining)
        remaining -= a[i]
        if remaining <= 0:
            break
    G = K @ a
    diag = np.diag(K)
    it = 0
    for it in range(1, max_iter + 1):
        # maximal violating pair: increase the smallest gradient among those
        # that can grow, decrease the largest among those that can shrink
        can_up = a < C
        can_down = a > 0
        G_up = np.where(can_up, G, np.inf)
        G_down = np.where(can_down, G, -np.inf)
        i = int(np.argmin(G_up))
        j = int(np.argmax(G_down))
        gap = G_down[j] - G_up[i]
        if gap <= tol:
            break
        eta = max(diag[i] + diag[j] - 2 * K[i, j], _TAU)
        t = min(gap / eta, C - a[i], a[j])
        a[i] += t
        a[j] -= t
        G += t * (K[:, i] - K[:, j])
    else:
        it = max_iter
    return a, G, it


def _rho(a, G, C):
    free = (a > 1e-12 * C) & (a < C * (1 - 1e-12))
    if free.any():
        return float(G[free].mean())
    # no margin vectors: any rho between the bound-side gradients is optimal
    lo_side = G[a <= 1e-12 * C]
    hi_side = G[a >= C * (1 - 1e-12)]
    ub = lo_side.min() if lo_side.size else np.inf
    lb = hi_side.max() if hi_side.size else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float((ub + lb) / 2)
    return float(ub if np.isfinite(ub) else lb)


def osvm_fit(Z, nu: float = 0.5, gamma: Union[float, str] = "median",
             tol: float = 1e-9, max_iter: int = 200_000) -> OsvmModel:
    """Fit a one-class SVM with an RBF kernel on the rows of ``Z``."""
    Z = _as_matrix(Z)
    n = len(Z)
    if n < 2:
        raise DomainError("one-class SVM needs at least two points")
    if not 0 < nu <= 1:
        raise DomainError("nu must lie in (0, 1]")
    if nu * n < 1:
        raise DomainError(f"nu * n = {nu * n:g} < 1 is infeasible")
    g = median_heuristic(Z) if gamma == "median" else float(gamma)
    K = rbf_gram(Z, Z, g)
    C = 1.0 / (nu * n)
    a, G, it = _smo(K, C, tol, max_iter)
    rho = _rho(a, G, C)
    up = a < C
    down = a > 0
    kkt = max(0.0, float(np.max(np.where(down, G, -np.inf)) - np.min(np.where(up, G, np.inf))))
    keep = a > 0
    return OsvmModel(Z[keep].copy(), a[keep].copy(), rho, float(nu), g, n, kkt, it)


def osvm_score(model: OsvmModel, Z) -> np.ndarray:
    """Raw decision values ``g(z)``; larger means more inside the support."""
    Z = _as_matrix(Z)
    if Z.shape[1] != model.support_vectors.shape[1]:
        raise ShapeError(f"expected dimension {model.support_vectors.shape[1]}, got {Z.shape[1]}")
    return rbf_gram(Z, model.support_vectors, model.gamma) @ model.coef - model.rho


@dataclass(frozen=True)
class SplitResult:
    it_idx: np.ndarray
    oot_idx: np.ndarray
    alpha_hat: float
    scores: np.ndarray
    rescaled: np.ndarray
    threshold: float

    @property
    def n(self) -> int:
        return len(self.scores)


def rescale(scores, reference=None) -> np.ndarray:
    """Affine min-max map of ``scores`` onto [0, 1].

    When ``reference`` values are given, the min and max are taken over the
    union so that fixed anchors (e.g. the score far from all data and the
    peak training score) pin the scale.  A constant batch maps to 1.
    """
    s = np.asarray(scores, float)
    pool = s if reference is None else np.concatenate([s, np.asarray(reference, float)])
    lo, hi = pool.min(), pool.max()
    if hi - lo <= 0:
        return np.ones_like(s)
    return (s - lo) / (hi - lo)


def widest_gap_threshold(values) -> float:
    """Midpoint of the largest gap between consecutive sorted values."""
    v = np.sort(np.asarray(values, float))
    if len(v) < 2:
        return 0.0
    gaps = np.diff(v)
    k = int(np.argmax(gaps))
    return float((v[k] + v[k + 1]) / 2)


def split_validation(scores, threshold: Union[float, str] = "auto",
                     reference=None) -> SplitResult:
    """Partition indices by rescaled score: IT iff ``rescaled > threshold``.

    ``threshold="auto"`` uses the midpoint of the widest gap among the sorted
    rescaled scores (anchors from ``reference`` included).
    """
    s = np.asarray(scores, float).reshape(-1)
    if s.size == 0:
        raise DomainError("no scores to split")
    r = rescale(s, reference)
    if threshold == "auto":
        anchors = [] if reference is None else list(rescale(reference, np.concatenate(
            [s, np.asarray(reference, float)])))
        thr = widest_gap_threshold(np.concatenate([r, anchors]))
    else:
        thr = float(threshold)
        if not 0 <= thr <= 1:
            raise DomainError("threshold must lie in [0, 1]")
    inside = r > thr
    it_idx = np.flatnonzero(inside)
    oot_idx = np.flatnonzero(~inside)
    return SplitResult(it_idx, oot_idx, len(it_idx) / len(s), s, r, thr)


def score_reference(model: OsvmModel, Ztr) -> np.ndarray:
    """Anchors for rescaling: the far-field score ``-rho`` and the top training score."""
    return np.array([-model.rho, float(np.max(osvm_score(model, Ztr)))])


def score_histogram(rescaled, bins: int = 20):
    """``(bin_lo, bin_hi, count)`` rows over [0, 1]."""
    counts, edges = np.histogram(np.asarray(rescaled, float), bins=bins, range=(0.0, 1.0))
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins)]


def nu_bound(nu: float, n: int) -> int:
    return math.ceil(nu * n)
