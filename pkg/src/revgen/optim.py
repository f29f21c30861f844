"""Adam with bias correction, updating named parameter arrays in place."""

import logging

import attr
import numpy as np

from .exceptions import NumericalError, ShapeError

_logger = logging.getLogger(__name__)


@attr.s(eq=False)
class AdamState:
    """Moment buffers and hyperparameters for one group of parameters.

    Buffers are created on the first step, keyed by parameter name.
    """

    lr = attr.ib(converter=float)
    beta1 = attr.ib(default=0.0, converter=float)
    beta2 = attr.ib(default=0.9, converter=float)
    eps = attr.ib(default=1e-8, converter=float)
    step = attr.ib(default=0, converter=int)
    m = attr.ib(factory=dict)
    v = attr.ib(factory=dict)

    def state_dict(self, prefix=""):
        """Step counter and moment buffers as named arrays."""
        state = {f"{prefix}step": np.array([self.step], dtype=np.int64)}
        for name in self.m:
            state[f"{prefix}m.{name}"] = self.m[name]
            state[f"{prefix}v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state, prefix=""):
        self.step = int(state[f"{prefix}step"][0])
        self.m, self.v = {}, {}
        for key, value in state.items():
            if key.startswith(f"{prefix}m."):
                name = key[len(prefix) + 2 :]
                self.m[name] = np.array(value)
                self.v[name] = np.array(state[f"{prefix}v.{name}"])


def adam_step(state, params, grads):
    """Applies one Adam update to params in place.

    Args:
        state (AdamState): Optimizer state; its step counter is incremented.
        params (Mapping[str, numpy.ndarray]): Parameters, updated in place.
        grads (Mapping[str, numpy.ndarray]): Gradients with the same names and shapes.

    Returns:
        Mapping[str, numpy.ndarray]: params.

    Raises:
        NumericalError: If any gradient is non-finite; nothing is updated.
        ShapeError: If names or shapes of params and grads differ.

    Examples:
        >>> p = {"w": np.array([1.0, 1.0])}
        >>> st = AdamState(lr=0.1)
        >>> adam_step(st, p, {"w": np.array([2.0, -0.5])})["w"].round(6).tolist()
        [0.9, 1.1]
        >>> adam_step(st, p, {"w": np.zeros(2)})["w"].round(6).tolist()
        [0.9, 1.1]
    """

    if params.keys() != grads.keys():
        raise ShapeError(f"parameter and gradient names differ: {sorted(set(params) ^ set(grads))}")
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericalError(f"non-finite gradients at step {state.step + 1} in: {', '.join(bad)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} does not match parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params
