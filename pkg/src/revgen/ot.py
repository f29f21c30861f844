"""Exact optimal transport between equal-size point clouds.

For two empirical distributions with the same number of points, optimal
transport reduces to the assignment problem: the pairing that minimizes the
average pair cost. :func:`solve_exact` solves it with
:func:`scipy.optimize.linear_sum_assignment`.
"""

import enum
import logging

import attr
import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import NumericalError, ShapeError

_logger = logging.getLogger(__name__)

CostFunction = enum.Enum("CostFunction", "EUCLIDEAN SQEUCLIDEAN")
"""Pair cost: Euclidean distance (default) or squared Euclidean distance."""


def _as_cost(cost_fn):
    return cost_fn if isinstance(cost_fn, CostFunction) else CostFunction[str(cost_fn).upper()]


@attr.s(frozen=True)
class TransportPlan:
    """An optimal pairing ``i -> permutation[i]`` and its mean cost."""

    permutation = attr.ib(converter=lambda p: np.asarray(p, dtype=np.intp))
    cost = attr.ib(converter=float)
    cost_fn = attr.ib(default=CostFunction.EUCLIDEAN, converter=_as_cost)


def _check_clouds(x, y):
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError(f"point clouds must be n x d, got {x.shape} and {y.shape}")
    if x.shape != y.shape:
        raise ShapeError(f"point clouds must have equal count and dimension, got {x.shape} and {y.shape}")


def cost_matrix(x, y, cost_fn=CostFunction.EUCLIDEAN):
    """Pairwise costs ``C[i, j] = c(x_i, y_j)``.

    Examples:
        >>> cost_matrix(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])).tolist()
        [[5.0]]
        >>> cost_matrix(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), "sqeuclidean").tolist()
        [[25.0]]
    """

    _check_clouds(x, y)
    metric = "euclidean" if _as_cost(cost_fn) is CostFunction.EUCLIDEAN else "sqeuclidean"
    return cdist(x.astype(np.float64), y.astype(np.float64), metric=metric)


def solve_exact(c, cost_fn=CostFunction.EUCLIDEAN):
    """Optimal assignment for a square cost matrix.

    Args:
        c (numpy.ndarray): ``n x n`` finite costs.
        cost_fn (CostFunction, optional): Recorded on the plan.

    Returns:
        TransportPlan: The optimal pairing; cost is the mean over pairs.

    Raises:
        ShapeError: If c is not square or empty.
        NumericalError: If c holds NaN or Inf.

    Examples:
        >>> plan = solve_exact(np.array([[0.0, 10.0], [10.0, 0.0]]))
        >>> plan.permutation.tolist(), plan.cost
        ([0, 1], 0.0)
    """

    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ShapeError(f"cost matrix must be square and non-empty, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NumericalError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(c)
    perm = np.empty(len(rows), dtype=np.intp)
    perm[rows] = cols
    return TransportPlan(perm, c[np.arange(len(perm)), perm].mean(), cost_fn)


def ot_loss_and_grad(x, y, cost_fn=CostFunction.EUCLIDEAN):
    """OT cost between two clouds and its gradients with the optimal pairing held fixed.

    Coincident pairs contribute zero gradient under the Euclidean cost.

    Returns:
        tuple: ``(loss, dx, dy, plan)``.

    Examples:
        >>> loss, dx, dy, _ = ot_loss_and_grad(np.array([[0.0]]), np.array([[3.0]]))
        >>> loss, dx.tolist(), dy.tolist()
        (3.0, [[-1.0]], [[1.0]])
    """

    cost_fn = _as_cost(cost_fn)
    plan = solve_exact(cost_matrix(x, y, cost_fn), cost_fn)
    n = len(x)
    diff = x.astype(np.float64) - y[plan.permutation].astype(np.float64)
    if cost_fn is CostFunction.EUCLIDEAN:
        dist = np.linalg.norm(diff, axis=1, keepdims=True)
        scale = np.divide(1.0, n * dist, out=np.zeros_like(dist), where=dist > 0)
        dx = diff * scale
    else:
        dx = 2.0 * diff / n
    dy = np.empty_like(dx)
    dy[plan.permutation] = -dx
    return plan.cost, dx.astype(x.dtype), dy.astype(y.dtype), plan


def sorted_1d_plan(x, y, cost_fn=CostFunction.EUCLIDEAN):
    """Optimal pairing of one-dimensional clouds by matching order statistics.

    Examples:
        >>> plan = sorted_1d_plan(np.array([[1.0], [0.0]]), np.array([[10.0], [0.0]]))
        >>> plan.permutation.tolist(), plan.cost
        ([0, 1], 4.5)
    """

    _check_clouds(x, y)
    if x.shape[1] != 1:
        raise ShapeError(f"sorted matching needs 1-D points, got dimension {x.shape[1]}")
    ox = np.argsort(x[:, 0], kind="stable")
    oy = np.argsort(y[:, 0], kind="stable")
    perm = np.empty(len(x), dtype=np.intp)
    perm[ox] = oy
    diff = np.abs(x[:, 0].astype(np.float64) - y[perm, 0].astype(np.float64))
    cost = diff if _as_cost(cost_fn) is CostFunction.EUCLIDEAN else diff**2
    return TransportPlan(perm, cost.mean(), cost_fn)
