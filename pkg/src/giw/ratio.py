"""Importance-weight estimators.

* :func:`kmm_match` -- kernel mean matching of a training batch onto a
  validation batch under box constraints (the per-batch weighting step).
* :func:`ulsif_fit` / :func:`rulsif_fit` -- closed-form least-squares fits of
  the (relative) density ratio with Gaussian basis functions.
* :func:`true_ratio` -- the exact ratio of two box densities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError
from .kernels import KernelConfig, _as_matrix, rbf_gram, ridge_stabilize

log = logging.getLogger(__name__)

DEFAULT_BOUND = 50.0
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class WeightVector:
    weights: np.ndarray
    bound: float = DEFAULT_BOUND
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0) or np.any(self.weights > self.bound):
            raise DomainError("weights must lie in [0, bound]")

    def __len__(self):
        return len(self.weights)

    def normalized(self) -> np.ndarray:
        """Rescale to mean one, then clip back into ``[0, bound]``."""
        mean = self.weights.mean() if len(self.weights) else 0.0
        if mean <= 0:
            return self.weights.copy()
        return np.clip(self.weights / mean, 0.0, self.bound)


# ---------------------------------------------------------------------------
# box-constrained quadratic programming


def kkt_residual(Q, c, x, lo, hi) -> float:
    """Infinity norm of the projected-gradient step ``x - P(x - grad)``."""
    g = Q @ x - c
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi)))) if len(x) else 0.0


def _active_set(Q, c, x, lo, hi, tol, max_iter):
    # Primal active-set method for bound constraints (finite termination for
    # positive definite Q).  ``x`` must be feasible.
    n = len(x)
    g = Q @ x - c
    fixed = np.zeros(n, dtype=bool)
    fixed |= (x <= lo) & (g > 0)
    fixed |= (x >= hi) & (g < 0)
    for it in range(1, max_iter + 1):
        free = ~fixed
        p = np.zeros(n)
        if free.any():
            try:
                p[free] = -np.linalg.solve(Q[np.ix_(free, free)], g[free])
            except np.linalg.LinAlgError as exc:
                raise NumericError("singular reduced system in box QP") from exc
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratio = np.where(p < 0, (lo - x) / p, np.where(p > 0, (hi - x) / p, np.inf))
        ratio[fixed] = np.inf
        j = int(np.argmin(ratio))
        if ratio[j] < 1.0:
            x = np.clip(x + ratio[j] * p, lo, hi)
            x[j] = lo[j] if p[j] < 0 else hi[j]
            fixed[j] = True
            g = Q @ x - c
            continue
        # full step reaches the minimiser on the current face
        x = np.clip(x + p, lo, hi)
        g = Q @ x - c
        # multipliers of the fixed bounds: g_i at lower, -g_i at upper
        mult = np.where(x <= lo, g, -g)
        mult[free] = np.inf
        j = int(np.argmin(mult))
        if mult[j] >= -tol:
            return x, it
        fixed[j] = False
    return x, max_iter


def solve_box_qp(Q, c, lo, hi, x0=None, tol: float = 1e-9, max_iter: int = 10_000,
                 ftol: float = 1e-10, pg_iter: int = 200):
    """Minimise ``0.5 x'Qx - c'x`` subject to ``lo <= x <= hi``.

    Up to ``pg_iter`` iterations of spectral (Barzilai-Borwein) projected
    gradient with Armijo backtracking locate the active set; if the KKT
    residual is not yet below ``tol`` a primal active-set method finishes
    the job exactly.  ``max_iter`` caps the total iteration count and ``ftol``
    is the relative objective change that ends the gradient phase early.

    Returns ``(x, info)``.
    """
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    n = len(c)
    lo = np.broadcast_to(np.asarray(lo, float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (n,)).copy()
    if Q.shape != (n, n):
        raise ShapeError(f"Q has shape {Q.shape}, expected {(n, n)}")
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, float), lo, hi)

    def obj(v):
        return 0.5 * v @ Q @ v - c @ v

    g = Q @ x - c
    f = obj(x)
    step = 1.0 / max(np.abs(Q).sum(axis=1).max(), 1e-12)
    it = 0
    res = kkt_residual(Q, c, x, lo, hi)
    for it in range(1, min(pg_iter, max_iter) + 1):
        if res <= tol:
            break
        d = np.clip(x - step * g, lo, hi) - x
        gd = g @ d
        t = 1.0
        while True:
            x_new = x + t * d
            f_new = obj(x_new)
            if f_new <= f + 1e-4 * t * gd or t < 1e-12:
                break
            t *= 0.5
        g_new = Q @ x_new - c
        s, yv = x_new - x, g_new - g
        sy = s @ yv
        step = float(np.clip((s @ s) / sy, 1e-10, 1e10)) if sy > 0 else 1e10
        small_change = abs(f - f_new) <= ftol * max(1.0, abs(f))
        x, g, f = x_new, g_new, f_new
        res = float(np.max(np.abs(x - np.clip(x - g, lo, hi))))
        if small_change:
            break
    pg_its = it
    as_its = 0
    if res > tol:
        x, as_its = _active_set(Q, c, x, lo, hi, tol, max_iter - pg_its)
    res = kkt_residual(Q, c, x, lo, hi)
    info = {"iterations": pg_its + as_its, "pg_iterations": pg_its,
            "active_set_iterations": as_its, "converged": res <= max(tol, 1e-6),
            "kkt": res, "objective": float(obj(x))}
    return x, info


# ---------------------------------------------------------------------------
# kernel mean matching


def kmm_match(Ztr, Zval, config: KernelConfig = KernelConfig(), bound: float = DEFAULT_BOUND,
              tol: float = 1e-9) -> WeightVector:
    """Weights ``w`` on ``Ztr`` whose weighted kernel mean matches that of ``Zval``.

    Solves ``min_w 0.5 w'(K + omega I)w - kappa'w`` s.t. ``0 <= w <= bound``,
    with ``K = k(Ztr, Ztr)`` and ``kappa_i = (m/n) sum_j k(ztr_i, zval_j)``.
    This is the squared RKHS distance between the two empirical means scaled
    by ``m^2 / 2``.  The bandwidth, when left as ``"median"``, comes from
    ``Ztr``.
    """
    Ztr, Zval = _as_matrix(Ztr), _as_matrix(Zval)
    if len(Ztr) == 0 or len(Zval) == 0:
        raise DomainError("kmm_match needs non-empty inputs")
    if Ztr.shape[1] != Zval.shape[1]:
        raise ShapeError(f"column mismatch: {Ztr.shape[1]} vs {Zval.shape[1]}")
    if bound < 0:
        raise DomainError("bound must be non-negative")
    m, n = len(Ztr), len(Zval)
    if bound == 0:
        return WeightVector(np.zeros(m), 0.0, {"kkt": 0.0, "converged": True})
    gamma = config.resolve(Ztr) if m > 1 else (
        config.gamma if not isinstance(config.gamma, str) else 1.0)
    K = ridge_stabilize(rbf_gram(Ztr, Ztr, gamma), config.ridge)
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise NumericError("kernel matrix is not positive definite after ridge") from exc
    kappa = (m / n) * rbf_gram(Ztr, Zval, gamma).sum(axis=1)
    w, info = solve_box_qp(K, kappa, 0.0, bound, x0=np.ones(m), tol=tol)
    info["gamma"] = gamma
    return WeightVector(np.clip(w, 0.0, bound), float(bound), info)


def kmm_objective(w, Ztr, Zval, gamma: float) -> float:
    """Squared RKHS distance ``|(1/m) sum w_i phi(z_i) - (1/n) sum phi(v_j)|^2``."""
    Ztr, Zval = _as_matrix(Ztr), _as_matrix(Zval)
    m, n = len(Ztr), len(Zval)
    w = np.asarray(w, float)
    return float(w @ rbf_gram(Ztr, Ztr, gamma) @ w / m**2
                 - 2 * w @ rbf_gram(Ztr, Zval, gamma).sum(axis=1) / (m * n)
                 + rbf_gram(Zval, Zval, gamma).sum() / n**2)


# ---------------------------------------------------------------------------
# least-squares importance fitting


@dataclass
class RatioModel:
    centers: np.ndarray
    theta: np.ndarray
    gamma: float
    eta: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if len(self.theta) != len(self.centers):
            raise ShapeError("one coefficient per center required")
        if not 0 <= self.eta <= 1:
            raise DomainError("eta must lie in [0, 1]")

    @property
    def variant(self) -> str:
        return "uLSIF" if self.eta == 0 else f"RuLSIF(eta={self.eta:g})"

    def __call__(self, X, clip: bool = True) -> np.ndarray:
        return ulsif_eval(self, X, clip=clip)


def _design(X, centers, gamma):
    return rbf_gram(X, centers, gamma)


def _lsif_solve(Phi_tr, Phi_te, eta, lam):
    H = (1 - eta) * (Phi_tr.T @ Phi_tr) / len(Phi_tr)
    if eta > 0:
        H = H + eta * (Phi_te.T @ Phi_te) / len(Phi_te)
    h = Phi_te.mean(axis=0)
    A = H + lam * np.eye(len(h))
    try:
        theta = np.linalg.solve(A, h)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular uLSIF system") from exc
    if not np.all(np.isfinite(theta)):
        raise NumericError("non-finite uLSIF coefficients")
    return theta


def _cv_score(Phi_tr, Phi_te, theta, eta):
    # held-out squared-loss criterion: 0.5 E_den[r^2] - E_num[r]
    r_tr, r_te = Phi_tr @ theta, Phi_te @ theta
    den = (1 - eta) * np.mean(r_tr**2) + eta * np.mean(r_te**2)
    return 0.5 * den - np.mean(r_te)


def _select_lambda(Phi_tr, Phi_te, eta, grid, n_folds, rng):
    if min(len(Phi_tr), len(Phi_te)) < n_folds:
        return grid[len(grid) // 2]
    f_tr = rng.permutation(len(Phi_tr)) % n_folds
    f_te = rng.permutation(len(Phi_te)) % n_folds
    scores = []
    for lam in grid:
        total = 0.0
        for k in range(n_folds):
            theta = _lsif_solve(Phi_tr[f_tr != k], Phi_te[f_te != k], eta, lam)
            total += _cv_score(Phi_tr[f_tr == k], Phi_te[f_te == k], theta, eta)
        scores.append(total / n_folds)
    return grid[int(np.argmin(scores))]


def rulsif_fit(Xtr, Xte, eta: float = 0.5, lam: Optional[float] = None, n_centers: int = 100,
               config: KernelConfig = KernelConfig(), seed=0,
               lambda_grid: Sequence[float] = LAMBDA_GRID, n_folds: int = 5) -> RatioModel:
    """Fit ``p_te / (eta p_te + (1 - eta) p_tr)`` by regularised least squares.

    Centers are a random subset of ``Xte``.  ``lam=None`` picks the ridge by
    ``n_folds``-fold cross-validation over ``lambda_grid`` (falling back to
    the middle of the grid when either sample has fewer than ``n_folds``
    rows).  A ``"median"`` bandwidth is computed on the centers.
    """
    if not 0 <= eta <= 1:
        raise DomainError("eta must lie in [0, 1]")
    if lam is not None and not lam > 0:
        raise DomainError("lambda must be positive")
    Xtr, Xte = _as_matrix(Xtr), _as_matrix(Xte)
    if Xtr.shape[1] != Xte.shape[1]:
        raise ShapeError("train/test column mismatch")
    if n_centers < 1 or n_centers > len(Xte):
        n_centers = min(max(n_centers, 1), len(Xte))
    rng = np.random.default_rng(seed)
    centers = Xte[np.sort(rng.choice(len(Xte), size=n_centers, replace=False))]
    if isinstance(config.gamma, str):
        pool = centers if len(np.unique(centers, axis=0)) > 1 else np.vstack([centers, Xtr])
        gamma = config.resolve(pool)
    else:
        gamma = float(config.gamma)
    Phi_tr, Phi_te = _design(Xtr, centers, gamma), _design(Xte, centers, gamma)
    if lam is None:
        lam = _select_lambda(Phi_tr, Phi_te, eta, tuple(lambda_grid), n_folds, rng)
    theta = _lsif_solve(Phi_tr, Phi_te, eta, lam)
    return RatioModel(centers, theta, gamma, float(eta), float(lam))


def ulsif_fit(Xtr, Xte, lam: Optional[float] = None, n_centers: int = 100,
              config: KernelConfig = KernelConfig(), seed=0, **kw) -> RatioModel:
    """Plain density ratio ``p_te / p_tr``; identical to ``rulsif_fit(eta=0)``."""
    return rulsif_fit(Xtr, Xte, 0.0, lam, n_centers, config, seed, **kw)


def ulsif_eval(model: RatioModel, X, clip: bool = True) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != model.centers.shape[1]:
        raise ShapeError("input dimension does not match the ratio model")
    r = _design(X, model.centers, model.gamma) @ model.theta
    return np.maximum(r, 0.0) if clip else r


# ---------------------------------------------------------------------------
# exact ratio for box specs


def true_ratios(spec, X, y) -> np.ndarray:
    """``p_te / p_tr`` at each row; NaN where the training density vanishes."""
    p_tr = spec.density("train", X, y)
    p_te = spec.density("test", X, y)
    out = np.full(len(p_tr), np.nan)
    ok = p_tr > 0
    out[ok] = p_te[ok] / p_tr[ok]
    return out


def true_ratio(spec, x, y) -> Optional[float]:
    """Exact importance at one point, or ``None`` off the training support."""
    r = true_ratios(spec, np.asarray(x, float)[None, :], [y])[0]
    return None if np.isnan(r) else float(r)
