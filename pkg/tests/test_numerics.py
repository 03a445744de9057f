import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from skeletonmap.assembly import eval_F_batch
from skeletonmap.errors import EvaluationFailed, GridTooCoarse, OutOfBox
from skeletonmap.numerics import (SmoothSurrogate, bump_weights, box_samples, fd_jacobian,
                                  numerical_rank, rank_ratio, singular_values, smooth_surrogate,
                                  sup_distance, surrogate_jacobian)


def test_fd_linear_exact(rng):
    A = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    J = fd_jacobian(lambda X: X @ A.T + b, rng.normal(size=4), 1e-3)
    assert np.allclose(J, A, atol=1e-10)


def test_fd_second_order():
    f = lambda X: np.column_stack([np.sin(X[:, 0]) * X[:, 1] ** 2, np.exp(X[:, 0] * X[:, 1])])
    x = np.array([0.3, -0.7])
    exact = np.array([[math.cos(0.3) * 0.49, 2 * math.sin(0.3) * -0.7],
                      [-0.7 * math.exp(-0.21), 0.3 * math.exp(-0.21)]])
    e1 = np.abs(fd_jacobian(f, x, 1e-2) - exact).max()
    e2 = np.abs(fd_jacobian(f, x, 5e-3) - exact).max()
    assert 3.5 <= e1 / e2 <= 4.5


def test_fd_batched_shape(rng):
    J = fd_jacobian(lambda X: X[:, :2] ** 2, rng.normal(size=(7, 3)))
    assert J.shape == (7, 2, 3)


def test_fd_failure():
    with pytest.raises(EvaluationFailed):
        fd_jacobian(lambda X: np.full((len(X), 1), np.nan), np.zeros(2))

    def boom(X):
        raise RuntimeError("nope")
    with pytest.raises(EvaluationFailed):
        fd_jacobian(boom, np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-10, 10)))
def test_singular_values_properties(A):
    sv = singular_values(A)
    assert np.all(np.diff(sv) <= 1e-12 * max(1, sv[0]))
    assert sv[-1] >= 0
    assert math.isclose(np.sum(sv ** 2), np.sum(A ** 2), rel_tol=1e-9, abs_tol=1e-9)


def test_rank_of_product(rng):
    A = rng.normal(size=(4, 3)) @ rng.normal(size=(3, 5))
    sv = singular_values(A)
    assert numerical_rank(sv) == 3
    assert rank_ratio(sv, 3) < 1e-12


def test_numerical_rank_examples():
    assert numerical_rank(np.array([1.0, 0.5, 1e-7])) == 2
    assert numerical_rank(np.array([0.0, 0.0])) == 0
    assert rank_ratio(np.zeros(4), 3) == 0
    assert list(numerical_rank(np.array([[2.0, 1.0], [1.0, 0.0]]))) == [2, 1]


def test_bump_weights():
    w = bump_weights(0.1, 0.01)
    assert math.isclose(w.sum(), 1.0)
    assert np.allclose(w, w[::-1])
    assert w[0] == 0 and w[-1] == 0


def test_surrogate_reproduces_low_degree_polynomials():
    f = lambda X: np.column_stack([1 + X[:, 0] - 2 * X[:, 1] + X[:, 0] * X[:, 1],
                                   np.full(len(X), 3.0)])
    sur = smooth_surrogate(f, [-1, -1], [1, 1], 11, 0.3, order=4)
    X = box_samples([-1, -1], [1, 1], 500, seed=3)
    # mollifying an affine-in-each-variable map with a symmetric kernel leaves it unchanged
    assert np.max(np.abs(sur(X) - f(X))) < 1e-9
    assert sur.fit_residual < 1e-9


def test_surrogate_derivative_continuity():
    f = lambda X: np.abs(X[:, :1] - 0.1) + np.abs(X[:, 1:2])
    sur = smooth_surrogate(f, [-1, -1], [1, 1], 9, 0.3, order=4)
    knots = np.unique(sur.knots[0])[1:-1]
    for kt in knots:
        a = np.array([[kt - 1e-10, 0.2]])
        b = np.array([[kt + 1e-10, 0.2]])
        for nu in ((0, 0), (1, 0), (2, 0)):
            assert abs(sur.derivative(a, nu)[0, 0] - sur.derivative(b, nu)[0, 0]) < 1e-8


def test_surrogate_jacobian_matches_fd():
    f = lambda X: np.column_stack([np.sin(2 * X[:, 0]) * X[:, 1], np.cos(X[:, 1])])
    sur = smooth_surrogate(f, [-1, -1], [1, 1], 15, 0.2)
    X = box_samples([-0.8, -0.8], [0.8, 0.8], 20, seed=1)
    J = surrogate_jacobian(sur, X)
    Jfd = fd_jacobian(sur, X, 1e-6)
    assert np.allclose(J, Jfd, atol=1e-6)
    assert surrogate_jacobian(sur, X[0]).shape == (2, 2)


def test_surrogate_errors(tmp_path):
    f = lambda X: X[:, :1]
    with pytest.raises(GridTooCoarse):
        smooth_surrogate(f, [0, 0], [1, 1], 3, 0.5)
    with pytest.raises(GridTooCoarse):
        smooth_surrogate(f, [0, 0], [1, 1], 5, 0.1)
    sur = smooth_surrogate(f, [0, 0], [1, 1], 5, 0.3)
    with pytest.raises(OutOfBox):
        sur(np.array([[1.5, 0.5]]))
    p = tmp_path / "s.bin"
    sur.save(p)
    back = SmoothSurrogate.load(p)
    X = box_samples([0, 0], [1, 1], 50)
    assert np.array_equal(back(X), sur(X))


def test_box_samples_deterministic():
    a = box_samples([0, -1], [1, 1], 100, seed=4)
    assert np.array_equal(a, box_samples([0, -1], [1, 1], 100, seed=4))
    assert a.min(axis=0)[1] >= -1 and a.max(axis=0)[0] <= 1


def test_sup_distance_examples():
    assert sup_distance(lambda X: X, lambda X: X, [0, 0], [1, 1], 100) == 0
    d = sup_distance(lambda X: X, lambda X: X + np.array([0.3, 0.4]), [0, 0], [1, 1], 100)
    assert math.isclose(d, 0.5)


def test_surrogate_of_F_is_close(toy):
    """The mollified surrogate of the level-d map stays within the truncation error
    plus the observed oscillation over one smoothing radius."""
    lo, hi = np.full(3, -0.2), np.full(3, 0.2)
    eps = 0.12
    fun = lambda X: eval_F_batch(toy, X, 2)
    sur = smooth_surrogate(fun, lo, hi, 9, eps)
    X = box_samples(lo, hi, 400, seed=2)
    # oscillation of F over eps-neighbourhoods, sampled
    rng = np.random.default_rng(0)
    D = rng.normal(size=(400, 3))
    D *= eps * rng.uniform(0, 1, (400, 1)) ** (1 / 3) / np.linalg.norm(D, axis=1, keepdims=True)
    osc = np.max(np.linalg.norm(fun(X + D) - fun(X), axis=1))
    err = np.max(np.linalg.norm(sur(X) - fun(X), axis=1))
    assert err <= 2 * osc + sur.fit_residual + 1e-9
