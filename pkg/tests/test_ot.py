import itertools

import numpy as np
import pytest

from revgen.exceptions import NumericalError, ShapeError
from revgen.gradcheck import max_relative_error, numeric_gradient
from revgen.ot import CostFunction, cost_matrix, ot_loss_and_grad, solve_exact, sorted_1d_plan
from revgen.tensor import Rng, sample_normal


def brute_force(c):
    n = len(c)
    return min(np.mean([c[i, p[i]] for i in range(n)]) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7])
@pytest.mark.parametrize("cost_fn", ["euclidean", "sqeuclidean"])
def test_exact_plan_matches_brute_force(n, cost_fn):
    r = Rng(n, cost_fn)
    x, y = sample_normal(r.spawn("x"), (n, 3)), sample_normal(r.spawn("y"), (n, 3))
    c = cost_matrix(x, y, cost_fn)
    plan = solve_exact(c, cost_fn)
    assert plan.cost == pytest.approx(brute_force(c), abs=1e-12)
    assert sorted(plan.permutation.tolist()) == list(range(n))
    assert plan.cost_fn is CostFunction[cost_fn.upper()]


def test_single_pair():
    loss, dx, dy, plan = ot_loss_and_grad(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
    assert loss == 5.0
    assert plan.permutation.tolist() == [0]
    assert np.allclose(dx, [[-0.6, -0.8]])
    assert np.allclose(dy, [[0.6, 0.8]])


def test_identical_clouds_have_zero_cost_and_gradient():
    x = sample_normal(Rng(0), (6, 4))
    loss, dx, dy, plan = ot_loss_and_grad(x, x[::-1].copy())
    assert loss == 0.0
    assert not dx.any() and not dy.any()
    assert plan.permutation.tolist() == [5, 4, 3, 2, 1, 0]


@pytest.mark.parametrize("cost_fn", ["euclidean", "sqeuclidean"])
def test_gradient_with_a_strict_pairing(cost_fn):
    x = sample_normal(Rng(1), (5, 3))
    y = x[[2, 0, 4, 1, 3]] + 0.01 * sample_normal(Rng(2), (5, 3))
    loss, dx, dy, plan = ot_loss_and_grad(x, y, cost_fn)
    assert plan.permutation.tolist() == [1, 3, 0, 4, 2]

    def f():
        return ot_loss_and_grad(x, y, cost_fn)[0]

    assert max_relative_error(dx.reshape(-1), numeric_gradient(f, x)) < 1e-6
    assert max_relative_error(dy.reshape(-1), numeric_gradient(f, y)) < 1e-6


def test_sorted_matching_agrees_with_exact_plan_in_1d():
    for seed in range(5):
        x, y = sample_normal(Rng(seed, "x"), (9, 1)), sample_normal(Rng(seed, "y"), (9, 1))
        assert sorted_1d_plan(x, y).cost == pytest.approx(solve_exact(cost_matrix(x, y)).cost, abs=1e-12)
    with pytest.raises(ShapeError):
        sorted_1d_plan(np.zeros((3, 2)), np.zeros((3, 2)))


def test_euclidean_cost_behaves_like_a_distance():
    a, b, c = (sample_normal(Rng(i), (6, 2)) for i in (3, 4, 5))

    def w(p, q):
        return ot_loss_and_grad(p, q)[0]

    assert w(a, a) == 0.0
    assert w(a, b) == pytest.approx(w(b, a), abs=1e-12)
    assert w(a, c) <= w(a, b) + w(b, c) + 1e-12


def test_bad_inputs():
    with pytest.raises(ShapeError):
        cost_matrix(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        solve_exact(np.zeros((2, 3)))
    with pytest.raises(NumericalError):
        solve_exact(np.array([[0.0, np.nan], [1.0, 0.0]]))
