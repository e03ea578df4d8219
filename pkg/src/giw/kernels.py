"""RBF kernels, Gram matrices and the median-distance bandwidth heuristic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DegenerateInputError, ShapeError

MEDIAN = "median"
DEFAULT_RIDGE = 1e-5
_BLOCK = 256


@dataclass(frozen=True)
class KernelConfig:
    gamma: Union[float, str] = MEDIAN
    ridge: float = DEFAULT_RIDGE
    squared_median: bool = True

    def __post_init__(self):
        if isinstance(self.gamma, str):
            if self.gamma != MEDIAN:
                raise ValueError(f"gamma must be positive or {MEDIAN!r}")
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def resolve(self, X) -> float:
        """Concrete bandwidth, computing the median heuristic on ``X`` if needed."""
        if self.gamma == MEDIAN:
            return median_heuristic(X, squared=self.squared_median)
        return float(self.gamma)


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {A.shape}")
    return A


def sq_dists(A, B) -> np.ndarray:
    """Pairwise squared Euclidean distances, computed row-block by row-block.

    Differences are formed explicitly (no ``|a|^2 + |b|^2 - 2ab`` expansion) so
    each entry is independent of how the rows are tiled.
    """
    A, B = _as_matrix(A), _as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    out = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], _BLOCK):
        diff = A[start:start + _BLOCK, None, :] - B[None, :, :]
        out[start:start + _BLOCK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def rbf_gram(A, B, gamma: float) -> np.ndarray:
    """``K[i, j] = exp(-gamma * |a_i - b_j|^2)``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return np.exp(-gamma * sq_dists(A, B))


def median_heuristic(X, squared: bool = True) -> float:
    """Bandwidth from the median pairwise distance of the rows of ``X``.

    With ``squared=True`` returns ``1 / median(|x_i - x_j|^2)``; otherwise
    ``1 / median(|x_i - x_j|)``.  Pairs with zero distance are ignored when
    the median would otherwise be zero.
    """
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise DegenerateInputError("median heuristic needs at least two rows")
    D = sq_dists(X, X)[np.triu_indices(X.shape[0], k=1)]
    if not squared:
        D = np.sqrt(D)
    med = np.median(D)
    if med <= 0:
        positive = D[D > 0]
        if positive.size == 0:
            raise DegenerateInputError("all rows are identical")
        med = np.median(positive)
    return float(1.0 / med)


def ridge_stabilize(K, omega: float = DEFAULT_RIDGE) -> np.ndarray:
    """Return ``K + omega * I``."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"ridge needs a square matrix, got {K.shape}")
    if omega < 0:
        raise ValueError("omega must be non-negative")
    out = K.copy()
    out[np.diag_indices_from(out)] += omega
    return out
