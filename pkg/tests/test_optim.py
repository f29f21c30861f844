import math

import numpy as np
import pytest

from revgen.exceptions import NumericalError, ShapeError
from revgen.optim import AdamState, adam_step


def scalar_adam(grads, lr, beta1, beta2, eps):
    p, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        p -= lr * (m / (1 - beta1**t)) / (math.sqrt(v / (1 - beta2**t)) + eps)
    return p


@pytest.mark.parametrize("beta1", [0.0, 0.5, 0.9])
def test_matches_scalar_reference(beta1):
    grads = [math.sin(0.7 * t) + 0.1 for t in range(50)]
    state = AdamState(lr=0.01, beta1=beta1, beta2=0.9, eps=1e-8)
    params = {"w": np.array([1.0])}
    for g in grads:
        adam_step(state, params, {"w": np.array([g])})
    assert state.step == 50
    assert abs(params["w"][0] - scalar_adam(grads, 0.01, beta1, 0.9, 1e-8)) < 1e-12


def test_defaults():
    state = AdamState(lr=1e-4)
    assert (state.beta1, state.beta2, state.eps) == (0.0, 0.9, 1e-8)


def test_first_step_moves_each_entry_by_lr():
    params = {"w": np.array([0.0, 0.0, 0.0])}
    adam_step(AdamState(lr=0.5), params, {"w": np.array([3.0, -0.2, 0.0])})
    assert np.allclose(params["w"], [-0.5, 0.5, 0.0])


def test_non_finite_gradient_leaves_parameters_alone():
    state = AdamState(lr=0.1)
    params = {"a": np.ones(2), "b": np.ones(2)}
    with pytest.raises(NumericalError, match="b"):
        adam_step(state, params, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
    assert state.step == 0
    assert params["a"].tolist() == [1.0, 1.0]
    assert not state.m


def test_mismatched_names_and_shapes():
    with pytest.raises(ShapeError):
        adam_step(AdamState(lr=0.1), {"a": np.ones(2)}, {"b": np.ones(2)})
    with pytest.raises(ShapeError):
        adam_step(AdamState(lr=0.1), {"a": np.ones(2)}, {"a": np.ones(3)})


def test_state_dict_resumes_identically():
    grads = [{"w": np.array([0.3, -1.0])}, {"w": np.array([0.1, 2.0])}, {"w": np.array([-0.4, 0.5])}]
    a, pa = AdamState(lr=0.05, beta1=0.5), {"w": np.zeros(2)}
    for g in grads:
        adam_step(a, pa, g)

    b, pb = AdamState(lr=0.05, beta1=0.5), {"w": np.zeros(2)}
    adam_step(b, pb, grads[0])
    c = AdamState(lr=0.05, beta1=0.5)
    c.load_state_dict(b.state_dict("opt."), "opt.")
    assert c.step == 1
    for g in grads[1:]:
        adam_step(c, pb, g)
    assert np.array_equal(pa["w"], pb["w"])
