"""Differentiable layers with hand-written forward and backward passes.

Every layer follows the same contract:

* ``forward(x)`` returns the output and stores nothing;
* ``backward(x, dy, accumulate=True)`` takes the *input* of the forward call
  and the gradient with respect to the output, returns the gradient with
  respect to the input, and (when ``accumulate``) adds parameter gradients to
  the layer's gradient buffers.

Handing the input back to ``backward`` instead of caching it is what lets the
reversible network reconstruct activations by inversion.
"""

import logging

import numpy as np

from .exceptions import NumericalError, ShapeError
from .tensor import as_dtype, conv2d, conv2d_backward, sample_normal

_logger = logging.getLogger(__name__)

_SIGMA_EPS = 1e-12


class Module:
    """Container of named parameters, gradient buffers, buffers and children."""

    def __init__(self):
        self._params = {}
        self._grads = {}
        self._buffers = {}
        self._children = {}

    def add_param(self, name, value):
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def add_buffer(self, name, value):
        self._buffers[name] = value
        return value

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def _walk(self, attr_name, prefix):
        out = {}
        for name, value in getattr(self, attr_name).items():
            out[prefix + name] = value
        for cname, child in self._children.items():
            out.update(child._walk(attr_name, f"{prefix}{cname}."))
        return out

    def named_params(self, prefix=""):
        """Returns ``{dotted name: parameter array}`` in a stable order."""
        return self._walk("_params", prefix)

    def named_grads(self, prefix=""):
        """Returns ``{dotted name: gradient buffer}``, keyed like :meth:`named_params`."""
        return self._walk("_grads", prefix)

    def named_buffers(self, prefix=""):
        return self._walk("_buffers", prefix)

    def num_params(self):
        return int(sum(p.size for p in self.named_params().values()))

    def zero_grad(self):
        for g in self.named_grads().values():
            g[...] = 0

    def state_dict(self, prefix=""):
        """Parameters and buffers, keyed by dotted name."""
        state = self.named_params(prefix)
        state.update(self.named_buffers(prefix))
        return state

    def load_state_dict(self, state, prefix=""):
        """Copies arrays from state into this module's parameters and buffers, in place.

        Raises:
            ShapeError: If a name is missing or a shape or dtype differs.
        """

        for name, target in self.state_dict(prefix).items():
            if name not in state:
                raise ShapeError(f"state has no entry {name}")
            src = np.asarray(state[name])
            if src.shape != target.shape or src.dtype != target.dtype:
                raise ShapeError(
                    f"{name}: expected {target.dtype} {target.shape}, got {src.dtype} {src.shape}"
                )
            np.copyto(target, src)


############################################################################
# Parameter-free activations


def relu_forward(x):
    """Elementwise max(x, 0).

    Examples:
        >>> relu_forward(np.array([-1.0, 2.0])).tolist()
        [0.0, 2.0]
    """

    return np.maximum(x, 0)


def relu_backward(x, dy):
    """Gradient of :func:`relu_forward`; the subgradient at 0 is 0.

    Examples:
        >>> relu_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0])).tolist()
        [0.0, 5.0]
    """

    return np.where(x > 0, dy, 0).astype(dy.dtype, copy=False)


def crelu_forward(x, axis=-1):
    """Concatenated ReLU: ``(max(x, 0), max(-x, 0))`` along axis.

    Examples:
        >>> crelu_forward(np.array([1.0, -2.0])).tolist()
        [1.0, 0.0, 0.0, 2.0]
    """

    return np.concatenate([np.maximum(x, 0), np.maximum(-x, 0)], axis=axis)


def crelu_backward(x, dy, axis=-1):
    """Gradient of :func:`crelu_forward` with respect to x."""
    pos, neg = np.split(dy, 2, axis=axis)
    return (np.where(x > 0, pos, 0) - np.where(x < 0, neg, 0)).astype(dy.dtype, copy=False)


class ReLU(Module):
    def forward(self, x):
        return relu_forward(x)

    def backward(self, x, dy, accumulate=True):
        return relu_backward(x, dy)


class CReLU(Module):
    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        return crelu_forward(x, self.axis)

    def backward(self, x, dy, accumulate=True):
        return crelu_backward(x, dy, self.axis)


############################################################################
# Affine layers


def _init_weight(rng, shape, fan_in, dtype):
    """Draws N(0, 1/fan_in) weights, or zeros when rng is None."""
    if rng is None:
        return np.zeros(shape, dtype=as_dtype(dtype))
    return sample_normal(rng, shape, 0.0, 1.0 / np.sqrt(fan_in), dtype)


class Dense(Module):
    """Fully connected layer ``y = x W^T + b`` on ``n x in`` inputs.

    Args:
        n_in (int): Input width.
        n_out (int): Output width.
        rng (Rng, optional): Stream for weight initialization; zero weights if None.
        dtype (str, optional): Parameter dtype. Defaults to ``"f32"``.
    """

    def __init__(self, n_in, n_out, rng=None, dtype="f32"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.add_param("weight", _init_weight(rng, (n_out, n_in), n_in, dtype))
        self.bias = self.add_param("bias", np.zeros(n_out, dtype=as_dtype(dtype)))

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Dense({self.n_in}->{self.n_out}) got input of shape {x.shape}")

    def forward(self, x):
        self._check(x)
        return x @ self.weight.T + self.bias

    def backward(self, x, dy, accumulate=True):
        self._check(x)
        if accumulate:
            self._grads["weight"] += dy.T @ x
            self._grads["bias"] += dy.sum(axis=0)
        return dy @ self.weight


class Conv(Module):
    """'Same' convolution with bias on ``N x C x H x W`` inputs.

    Args:
        c_in (int): Input channels.
        c_out (int): Output channels.
        kernel (int): Odd kernel extent; padding is ``(kernel - 1) // 2``.
        rng (Rng, optional): Stream for weight initialization; zero weights if None.
        dtype (str, optional): Parameter dtype. Defaults to ``"f32"``.
    """

    def __init__(self, c_in, c_out, kernel=3, rng=None, dtype="f32"):
        super().__init__()
        if kernel % 2 == 0:
            raise ShapeError(f"kernel extent must be odd, got {kernel}")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.pad = (kernel - 1) // 2
        fan_in = c_in * kernel * kernel
        self.weight = self.add_param("weight", _init_weight(rng, (c_out, c_in, kernel, kernel), fan_in, dtype))
        self.bias = self.add_param("bias", np.zeros(c_out, dtype=as_dtype(dtype)))

    def forward(self, x):
        return conv2d(x, self.weight, self.pad) + self.bias[None, :, None, None]

    def backward(self, x, dy, accumulate=True):
        dx, dw = conv2d_backward(x, self.weight, dy, self.pad)
        if accumulate:
            self._grads["weight"] += dw
            self._grads["bias"] += dy.sum(axis=(0, 2, 3))
        return dx


############################################################################
# Spectral normalization


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class SpectralNorm(Module):
    """Dense layer whose effective weight is ``W / sigma``, sigma estimated by power iteration.

    ``u`` and ``v`` are buffers, not parameters. :meth:`power_iterate` advances
    them; :meth:`forward` and :meth:`backward` use the current vectors without
    touching them, so a backward pass sees the same effective weight as the
    forward pass before it. The backward pass differentiates through sigma
    (``sigma = u^T W v`` with u and v held fixed).

    Args:
        dense (Dense): Wrapped layer; its ``weight``/``bias`` become this layer's parameters.
        rng (Rng): Stream for the random unit start vector.
        n_iterations (int, optional): Power iterations per update. Defaults to 1.
        warmup (int, optional): Power iterations run at construction. Defaults to 0.
    """

    def __init__(self, dense, rng, n_iterations=1, warmup=0):
        super().__init__()
        self.dense = dense
        self.n_iterations = n_iterations
        self.weight = self.add_param("weight", dense.weight)
        self.bias = self.add_param("bias", dense.bias)
        dt = dense.weight.dtype
        self.u = self.add_buffer("u", _unit(sample_normal(rng, (dense.n_out,), dtype="f64")).astype(dt))
        self.v = self.add_buffer("v", _unit(self.weight.T @ self.u))
        for _ in range(warmup):
            self._iterate_once()

    def _iterate_once(self):
        self.v[...] = _unit(self.weight.T @ self.u)
        self.u[...] = _unit(self.weight @ self.v)

    def power_iterate(self):
        for _ in range(self.n_iterations):
            self._iterate_once()

    def sigma(self):
        s = float(self.u @ (self.weight @ self.v))
        if not np.isfinite(s) or abs(s) < _SIGMA_EPS:
            raise NumericalError(f"spectral norm estimate {s} is undefined (zero or degenerate weight)")
        return s

    def effective_weight(self):
        return self.weight / self.weight.dtype.type(self.sigma())

    def forward(self, x):
        self.dense._check(x)
        return x @ self.effective_weight().T + self.bias

    def backward(self, x, dy, accumulate=True):
        self.dense._check(x)
        sigma = self.sigma()
        w_sn = self.weight / self.weight.dtype.type(sigma)
        if accumulate:
            g = dy.T @ x
            coef = float(np.sum(g * self.weight)) / sigma**2
            self._grads["weight"] += g / sigma - coef * np.outer(self.u, self.v)
            self._grads["bias"] += dy.sum(axis=0)
        return dy @ w_sn


def spectral_normalize(layer):
    """Runs one power-iteration update on layer and returns its effective weight.

    Examples:
        >>> from revgen.tensor import Rng
        >>> layer = SpectralNorm(Dense(2, 2, dtype="f64"), Rng(0))
        >>> layer.weight[...] = np.diag([3.0, 1.0])
        >>> for _ in range(50):
        ...     w_sn = spectral_normalize(layer)
        >>> np.round(w_sn, 6).tolist()
        [[1.0, 0.0], [0.0, 0.333333]]
    """

    layer.power_iterate()
    return layer.effective_weight()


############################################################################
# Stacks


class Sequential(Module):
    """Layers applied in order.

    ``backward`` recomputes the inner activations from the stack's input, so
    nothing is kept between a forward and a backward call.
    """

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, x, dy, accumulate=True):
        inputs = [x]
        for layer in self.layers[:-1]:
            inputs.append(layer.forward(inputs[-1]))
        for layer, inp in zip(reversed(self.layers), reversed(inputs)):
            dy = layer.backward(inp, dy, accumulate)
        return dy
