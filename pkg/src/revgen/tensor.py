"""Dense tensors, a reproducible random number generator and the numerical
kernels everything else builds on.

Tensors are plain :class:`numpy.ndarray` values in row-major order; images use
the channels-first ``N x C x H x W`` layout. Two floating-point dtypes are used,
named ``f32`` (training) and ``f64`` (gradient checks).

Kernels never mutate their inputs and are deterministic: the same inputs give
bit-identical outputs. Non-finite results raise :class:`NumericalError`
instead of propagating.
"""

import logging
import zlib

import attr
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import NumericalError, ShapeError

_logger = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


def as_dtype(name):
    """Resolves a dtype name.

    Args:
        name (str or numpy dtype): ``"f32"``, ``"f64"`` or a numpy float dtype.

    Returns:
        numpy.dtype: The resolved dtype.

    Raises:
        ShapeError: If the dtype is not one of the supported floating types.

    Examples:
        >>> as_dtype("f64")
        dtype('float64')
        >>> as_dtype("i8")
        Traceback (most recent call last):
        ...
        revgen.exceptions.ShapeError: unsupported dtype i8; expected one of f32, f64
    """

    if isinstance(name, str) and name in DTYPES:
        return np.dtype(DTYPES[name])
    try:
        dt = np.dtype(name)
    except TypeError:
        dt = None
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"unsupported dtype {name}; expected one of {', '.join(DTYPES)}")
    return dt


def dtype_name(dtype):
    """Returns ``"f32"`` or ``"f64"`` for a float dtype."""
    return {np.dtype(v): k for k, v in DTYPES.items()}[np.dtype(dtype)]


def ensure_finite(x, what="tensor"):
    """Returns x unchanged, raising NumericalError if it holds NaN or Inf."""
    if not np.all(np.isfinite(x)):
        n_bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericalError(f"{what} has {n_bad} non-finite value(s)")
    return x


############################################################################
# Random numbers


@attr.s(eq=False, repr=False)
class Rng:
    """Counter-based (Philox) random stream.

    A stream is identified by a seed and a stream name; :meth:`spawn` derives
    independent named streams, so data order, adversary initialization and
    noise can be varied independently from one another. The derivation depends
    only on integers, which keeps the draws identical across platforms.

    Examples:
        >>> a = Rng(7).spawn("data").generator.integers(0, 1000, 3)
        >>> b = Rng(7).spawn("data").generator.integers(0, 1000, 3)
        >>> bool((a == b).all())
        True
    """

    seed = attr.ib(converter=int)
    stream = attr.ib(default="", converter=str)
    generator = attr.ib(init=False)

    def __attrs_post_init__(self):
        if self.seed < 0:
            raise ShapeError(f"seed must be non-negative, got {self.seed}")
        spawn_key = tuple(zlib.crc32(part.encode("UTF-8")) for part in self.stream.split("/") if part)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream!r})"

    def spawn(self, name):
        """Returns the independent child stream ``name`` of this stream."""
        stream = f"{self.stream}/{name}" if self.stream else name
        return Rng(self.seed, stream)

    def get_state(self):
        """Returns the generator state as a dict of uint64 arrays."""
        st = self.generator.bit_generator.state
        return {
            "counter": np.asarray(st["state"]["counter"], dtype=np.uint64),
            "key": np.asarray(st["state"]["key"], dtype=np.uint64),
            "buffer": np.asarray(st["buffer"], dtype=np.uint64),
            "position": np.array([st["buffer_pos"], st["has_uint32"], st["uinteger"]], dtype=np.uint64),
        }

    def set_state(self, state):
        """Restores a state produced by :meth:`get_state`."""
        pos = [int(p) for p in state["position"]]
        self.generator.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.asarray(state["counter"], dtype=np.uint64),
                "key": np.asarray(state["key"], dtype=np.uint64),
            },
            "buffer": np.asarray(state["buffer"], dtype=np.uint64),
            "buffer_pos": pos[0],
            "has_uint32": pos[1],
            "uinteger": pos[2],
        }


def sample_normal(rng, shape, mean=0.0, std=1.0, dtype="f64"):
    """Draws i.i.d. Gaussian values.

    Args:
        rng (Rng): Random stream.
        shape (tuple of int): Output shape.
        mean (float, optional): Mean. Defaults to 0.
        std (float, optional): Standard deviation, non-negative. Defaults to 1.
        dtype (str, optional): ``"f32"`` or ``"f64"``. Defaults to ``"f64"``.

    Returns:
        numpy.ndarray: The draws.

    Raises:
        ShapeError: If std is negative.

    Examples:
        >>> sample_normal(Rng(0), (3,), mean=2.5, std=0.0).tolist()
        [2.5, 2.5, 2.5]
    """

    if std < 0:
        raise ShapeError(f"std must be non-negative, got {std}")
    dt = as_dtype(dtype)
    draws = rng.generator.standard_normal(size=shape, dtype=dt)
    return ensure_finite((draws * dt.type(std) + dt.type(mean)).astype(dt, copy=False), "normal sample")


############################################################################
# Shape helpers


def split_channels(x, axis=1):
    """Splits x into first and second half along axis.

    Examples:
        >>> a, b = split_channels(np.arange(4.0).reshape(1, 4), axis=1)
        >>> a.tolist(), b.tolist()
        ([[0.0, 1.0]], [[2.0, 3.0]])
    """

    c = x.shape[axis]
    if c % 2:
        raise ShapeError(f"cannot split odd extent {c} along axis {axis}")
    return tuple(np.split(x, 2, axis=axis))


def concat_channels(a, b, axis=1):
    """Concatenates a and b along axis; inverse of :func:`split_channels`."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot concatenate halves of shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=axis)


def std_per_dim(x):
    """Population standard deviation of each column of a 2-D array.

    Examples:
        >>> std_per_dim(np.array([[0.0, 1.0], [2.0, 1.0]])).tolist()
        [1.0, 0.0]
    """

    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {x.shape}")
    return x.std(axis=0)


def l2_norm(x):
    """Euclidean norm of all elements.

    Examples:
        >>> l2_norm(np.array([3.0, 4.0]))
        5.0
    """

    return float(np.sqrt(np.sum(np.square(x, dtype=np.float64))))


############################################################################
# Kernels


def matmul(a, b):
    """Matrix product of a 2-D ``m x k`` and a 2-D ``k x n`` array.

    Examples:
        >>> matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]])).tolist()
        [[3.0], [7.0]]
    """

    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul result")


def _im2col(x, kh, kw, pad):
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _check_conv(x, w, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    kh, kw = w.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if pad < 0 or x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeError(f"conv2d padding {pad} too small for input {x.shape} and kernel {kh}x{kw}")


def conv2d(x, w, pad):
    """2-D cross-correlation with stride 1 and zero padding.

    Args:
        x (numpy.ndarray): Input, ``N x C x H x W``.
        w (numpy.ndarray): Weights, ``O x C x kh x kw`` with odd kernel extents.
        pad (int): Zero padding on each spatial side; ``(k - 1) // 2`` keeps the
            spatial size.

    Returns:
        numpy.ndarray: Output, ``N x O x H' x W'``.

    Raises:
        ShapeError: On mismatched channels, even kernels or insufficient padding.

    Examples:
        >>> y = conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), pad=1)
        >>> y[0, 0].tolist()[0], y[0, 0].tolist()[1]
        ([4.0, 6.0, 6.0, 4.0], [6.0, 9.0, 9.0, 6.0])
    """

    _check_conv(x, w, pad)
    n = x.shape[0]
    o, _, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, pad)
    out = cols @ w.reshape(o, -1).T
    return ensure_finite(np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)), "conv2d result")


def conv2d_backward(x, w, dy, pad):
    """Gradients of :func:`conv2d` with respect to its input and weights.

    Args:
        x (numpy.ndarray): Input of the forward call.
        w (numpy.ndarray): Weights of the forward call.
        dy (numpy.ndarray): Gradient with respect to the forward output.
        pad (int): Padding of the forward call.

    Returns:
        tuple: ``(dx, dw)`` shaped like x and w.
    """

    _check_conv(x, w, pad)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, pad)
    if dy.shape != (n, o, ho, wo):
        raise ShapeError(f"conv2d gradient shape {dy.shape} does not match output {(n, o, ho, wo)}")
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dy_mat.T @ cols).reshape(w.shape)
    dcols = (dy_mat @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + wd])
    return dx, dw
