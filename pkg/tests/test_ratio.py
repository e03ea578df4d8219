import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from giw.errors import DomainError, ShapeError
from giw.kernels import KernelConfig, rbf_gram, ridge_stabilize
from giw.ratio import (WeightVector, kkt_residual, kmm_match, kmm_objective, rulsif_fit,
                       solve_box_qp, true_ratio, true_ratios, ulsif_eval, ulsif_fit)
from giw.synth import make_case_spec, make_grid_example


def brute_force_box_qp(Q, c, lo, hi):
    """Exact minimiser by enumerating every (lower, free, upper) pattern."""
    n = len(c)
    best, best_x = np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        x = np.where(np.array(pattern) == 0, lo, hi).astype(float)
        free = np.array(pattern) == 1
        if free.any():
            rhs = c[free] - Q[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(Q[np.ix_(free, free)], rhs)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            continue
        f = 0.5 * x @ Q @ x - c @ x
        if f < best:
            best, best_x = f, x
    return best_x, best


def gaussian_ratio_rmse(n, seed):
    r = np.random.default_rng(seed)
    Xtr = r.normal(0.0, 1.0, n)
    Xte = r.normal(0.5, 1.0, n)
    model = ulsif_fit(Xtr, Xte, seed=seed)
    grid = np.linspace(-1, 1, 201)
    return float(np.sqrt(np.mean((ulsif_eval(model, grid) - np.exp(0.5 * grid - 0.125)) ** 2)))


def test_six_point_two_cluster_kmm_matches_exact_qp():
    Ztr = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
    Zval = np.array([[0.05], [0.15], [0.1]])
    cfg = KernelConfig(gamma=1.0)
    wv = kmm_match(Ztr, Zval, cfg, bound=50)
    K = ridge_stabilize(rbf_gram(Ztr, Ztr, 1.0), 1e-5)
    kappa = (6 / 3) * rbf_gram(Ztr, Zval, 1.0).sum(axis=1)
    x_ref, f_ref = brute_force_box_qp(K, kappa, np.zeros(6), np.full(6, 50.0))
    assert np.allclose(wv.weights, x_ref, atol=1e-6)
    assert wv.info["objective"] == pytest.approx(f_ref, abs=1e-9)
    assert np.all(wv.weights[3:] < 1e-6)
    assert wv.weights[:3].sum() > 5


@given(seed=st.integers(0, 10_000))
def test_box_qp_agrees_with_enumeration(seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(5, 5))
    Q = A @ A.T + 0.1 * np.eye(5)
    c = r.normal(scale=3, size=5)
    x, info = solve_box_qp(Q, c, -1.0, 1.0)
    x_ref, f_ref = brute_force_box_qp(Q, c, -np.ones(5), np.ones(5))
    assert info["objective"] == pytest.approx(f_ref, abs=1e-9)
    assert np.allclose(x, x_ref, atol=1e-6)
    assert kkt_residual(Q, c, x, -1.0, 1.0) <= 1e-6


def test_identical_multisets_give_unit_weights(rng):
    Z = rng.normal(size=(40, 1))
    wv = kmm_match(Z, Z.copy())
    assert np.allclose(wv.weights, 1.0, atol=1e-3)


def test_identical_distributions_mean_weight(rng):
    Ztr = rng.normal(size=(200, 1))
    Zv = rng.normal(size=(200, 1))
    w = kmm_match(Ztr, Zv).weights
    assert 0.9 <= w.mean() <= 1.1


def test_zero_bound_gives_zero_weights(rng):
    assert np.array_equal(kmm_match(rng.normal(size=(5, 2)), rng.normal(size=(3, 2)), bound=0).weights,
                          np.zeros(5))


def test_kmm_errors(rng):
    with pytest.raises(DomainError):
        kmm_match(np.empty((0, 1)), rng.normal(size=(3, 1)))
    with pytest.raises(DomainError):
        kmm_match(rng.normal(size=(3, 1)), np.empty((0, 1)))
    with pytest.raises(ShapeError):
        kmm_match(rng.normal(size=(3, 1)), rng.normal(size=(3, 2)))


@given(seed=st.integers(0, 10_000), bound=st.floats(0.5, 60))
def test_kmm_weights_in_box_and_stationary(seed, bound):
    r = np.random.default_rng(seed)
    Ztr = r.normal(size=(int(r.integers(2, 30)), 1))
    Zv = r.normal(loc=r.normal(), size=(int(r.integers(1, 10)), 1))
    wv = kmm_match(Ztr, Zv, bound=bound)
    assert np.all(wv.weights >= 0) and np.all(wv.weights <= bound)
    assert wv.info["kkt"] <= 1e-6


def test_kmm_objective_is_scaled_qp_objective(rng):
    Ztr, Zv = rng.normal(size=(8, 2)), rng.normal(size=(5, 2))
    g = 0.7
    w = rng.uniform(0, 2, 8)
    K = rbf_gram(Ztr, Ztr, g)
    kappa = (8 / 5) * rbf_gram(Ztr, Zv, g).sum(axis=1)
    qp = 0.5 * w @ K @ w - kappa @ w
    const = rbf_gram(Zv, Zv, g).sum() / 25
    assert kmm_objective(w, Ztr, Zv, g) == pytest.approx(2 * qp / 64 + const, rel=1e-12)


def test_weight_vector_invariants():
    with pytest.raises(DomainError):
        WeightVector(np.array([-0.1, 1.0]))
    with pytest.raises(DomainError):
        WeightVector(np.array([51.0]))
    wv = WeightVector(np.array([0.0, 2.0, 4.0]), bound=5.0)
    assert np.allclose(wv.normalized(), [0.0, 1.0, 2.0])
    # mean-one rescaling would give 5; the bound clips it back
    assert np.allclose(WeightVector(np.array([0, 0, 0, 0, 1.0]), bound=1.0).normalized(),
                       [0, 0, 0, 0, 1.0])
    assert np.array_equal(WeightVector(np.zeros(3)).normalized(), np.zeros(3))


def test_ulsif_same_distribution_mean_one():
    r = np.random.default_rng(3)
    X = r.normal(size=500)
    w = ulsif_eval(ulsif_fit(X, X, seed=0), X)
    assert abs(w.mean() - 1) <= 0.1


def test_ulsif_gaussian_ratio_rmse():
    assert gaussian_ratio_rmse(2000, 0) <= 0.15


def test_ulsif_rmse_decreases_with_n():
    rm = [np.mean([gaussian_ratio_rmse(n, s) for s in range(3)]) for n in (250, 500, 1000, 2000)]
    # monotone within noise: each doubling may not increase by more than 10%
    assert all(b <= 1.1 * a for a, b in zip(rm, rm[1:]))
    assert rm[-1] < rm[0]


def test_ulsif_huge_lambda_kills_ratio(rng):
    X = rng.normal(size=100)
    model = ulsif_fit(X, X + 0.5, lam=1e12)
    assert np.max(np.abs(ulsif_eval(model, X, clip=False))) < 1e-9


def test_rulsif_eta_zero_is_ulsif_bitwise(rng):
    Xtr, Xte = rng.normal(size=300), rng.normal(0.3, 1, 300)
    a = rulsif_fit(Xtr, Xte, eta=0.0, seed=5)
    b = ulsif_fit(Xtr, Xte, seed=5)
    assert np.array_equal(a.theta, b.theta) and a.lam == b.lam and a.gamma == b.gamma
    assert b.variant == "uLSIF"


def test_rulsif_eta_one_is_flat(rng):
    Xtr, Xte = rng.normal(size=400), rng.normal(1.0, 1, 400)
    w = ulsif_eval(rulsif_fit(Xtr, Xte, eta=1.0, seed=0), Xte)
    assert abs(np.median(w) - 1) < 0.1


@pytest.mark.parametrize("eta", [0.0, 0.3, 0.5, 0.9])
def test_rulsif_identical_distributions(eta):
    r = np.random.default_rng(int(eta * 10))
    X = r.normal(size=(500, 1))
    w = ulsif_eval(rulsif_fit(X, X, eta=eta, seed=1), X)
    assert abs(w.mean() - 1) < 0.1


def test_ratio_errors(rng):
    with pytest.raises(DomainError):
        rulsif_fit(rng.normal(size=10), rng.normal(size=10), eta=1.5)
    with pytest.raises(DomainError):
        ulsif_fit(rng.normal(size=10), rng.normal(size=10), lam=-1.0)
    with pytest.raises(ShapeError):
        ulsif_fit(rng.normal(size=(10, 2)), rng.normal(size=(10, 1)))


def test_true_ratio_toy_half():
    spec = make_grid_example("aligned")
    assert true_ratio(spec, [-0.5, 0.5], 1) == 0.5
    assert true_ratio(spec, [-0.5, -0.5], 0) == 0.5


def test_true_ratio_undefined_off_training_support():
    spec = make_grid_example("checkerboard")
    assert true_ratio(spec, [0.5, 0.5], 0) is None
    assert np.isnan(true_ratios(spec, np.array([[0.5, 0.5]]), [0])[0])


def test_true_ratio_identical_specs():
    spec = make_case_spec("i")
    X = np.array([[-0.5, 0.5], [-0.5, -0.5]])
    assert np.array_equal(true_ratios(spec, X, [1, 0]), [1.0, 1.0])
