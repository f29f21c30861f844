"""Invertible networks built from reversible blocks and invertible subsampling.

A network is an ordered list of stages; each stage is bijective, so the whole
network is. The same object is the encoder (:meth:`InvertibleNet.forward`) and,
through its exact inverse, the decoder (:meth:`InvertibleNet.inverse`).

Gradients can be computed two ways:

* the reference path keeps every stage input (:meth:`InvertibleNet.forward_cached`
  and :meth:`InvertibleNet.backward_cached`);
* :meth:`InvertibleNet.backward_recompute` keeps only the output and
  reconstructs each stage input by inversion while walking backwards, so the
  number of retained stage buffers does not grow with depth.

:meth:`InvertibleNet.inverse_backward` does the same for the decoder, walking
forward and reconstructing stage outputs with the forward map.
"""

import logging

import numpy as np

from .exceptions import ShapeError
from .layers import Conv, Module, ReLU, Sequential
from .tensor import concat_channels, split_channels

_logger = logging.getLogger(__name__)


############################################################################
# Reversible block


class RevBlock(Module):
    """Additive coupling ``y1 = x1 + F(x2)``, ``y2 = x2 + G(y1)`` over the channel halves.

    Args:
        f (Module): Maps the second half to a tensor shaped like the first.
        g (Module): Maps the first output half to a tensor shaped like the second.
    """

    def __init__(self, f, g):
        super().__init__()
        self.f = self.add_child("F", f)
        self.g = self.add_child("G", g)

    @staticmethod
    def _residual(branch, ref, what):
        if branch.shape != ref.shape:
            raise ShapeError(f"{what} output shape {branch.shape} does not match residual {ref.shape}")
        return branch

    def forward_halves(self, x1, x2):
        if x1.shape != x2.shape:
            raise ShapeError(f"block halves differ in shape: {x1.shape} vs {x2.shape}")
        y1 = x1 + self._residual(self.f.forward(x2), x1, "F")
        y2 = x2 + self._residual(self.g.forward(y1), x2, "G")
        return y1, y2

    def inverse_halves(self, y1, y2):
        if y1.shape != y2.shape:
            raise ShapeError(f"block halves differ in shape: {y1.shape} vs {y2.shape}")
        x2 = y2 - self._residual(self.g.forward(y1), y2, "G")
        x1 = y1 - self._residual(self.f.forward(x2), y1, "F")
        return x1, x2

    def forward(self, x):
        return concat_channels(*self.forward_halves(*split_channels(x)))

    def inverse(self, y):
        return concat_channels(*self.inverse_halves(*split_channels(y)))

    def backward(self, x, dy, accumulate=True):
        """Returns dL/dx given the block input x and dL/dy."""
        x1, x2 = split_channels(x)
        dy1, dy2 = split_channels(dy)
        y1 = x1 + self.f.forward(x2)
        dy1 = dy1 + self.g.backward(y1, dy2, accumulate)
        dx2 = dy2 + self.f.backward(x2, dy1, accumulate)
        return concat_channels(dy1, dx2)

    def inverse_backward(self, x, dx, accumulate=True):
        """Backpropagates through :meth:`inverse`.

        Args:
            x (numpy.ndarray): Output of the inverse call (the block's input side).
            dx (numpy.ndarray): dL/dx.

        Returns:
            tuple: ``(y, dy)``, the inverse call's input rebuilt by the forward map and dL/dy.
        """

        x1, x2 = split_channels(x)
        dx1, dx2 = split_channels(dx)
        y1 = x1 + self.f.forward(x2)
        y2 = x2 + self.g.forward(y1)
        dx2 = dx2 + self.f.backward(x2, -dx1, accumulate)
        dy1 = dx1 + self.g.backward(y1, -dx2, accumulate)
        return concat_channels(y1, y2), concat_channels(dy1, dx2)


def block_forward(block, x1, x2):
    """Applies a reversible block to the halves x1, x2 and returns ``(y1, y2)``."""
    return block.forward_halves(x1, x2)


def block_inverse(block, y1, y2):
    """Exact inverse of :func:`block_forward`: returns ``(x1, x2)``."""
    return block.inverse_halves(y1, y2)


def conv_branch(c_half, width, kernel, rng=None, dtype="f32"):
    """The conv-ReLU-conv branch used for both F and G of a block."""
    return Sequential(
        [
            Conv(c_half, width, kernel, rng=rng and rng.spawn("conv0"), dtype=dtype),
            ReLU(),
            Conv(width, c_half, kernel, rng=rng and rng.spawn("conv1"), dtype=dtype),
        ]
    )


############################################################################
# Invertible subsampling

_DIAGONAL_FIRST = (0, 3, 1, 2)  # phase order (0,0), (1,1), (0,1), (1,0); phase index is 2*row + col


def _channel_order(c):
    """Output order of the ``4c`` phase-major space-to-depth channels.

    With an odd channel count every channel's diagonal phases come first, so the
    first output half (the first stream of the next block) holds the two
    diagonal checkerboards. With an even count each half keeps all four phases
    of its own channels, so a stream stays a full-coverage checkerboard.
    """

    if c % 2:
        return np.array([ph * c + ch for ph in _DIAGONAL_FIRST for ch in range(c)])
    half = c // 2
    return np.array(
        [ph * c + ch for h in (0, 1) for ph in _DIAGONAL_FIRST for ch in range(h * half, (h + 1) * half)]
    )


def subsample_forward(x):
    """Moves the four 2x2 spatial phases of each channel into channels.

    Args:
        x (numpy.ndarray): ``N x C x H x W`` with even H and W.

    Returns:
        numpy.ndarray: ``N x 4C x H/2 x W/2``, a permutation of x's elements.

    Raises:
        ShapeError: If H or W is odd.

    Examples:
        >>> x = np.arange(16.0).reshape(1, 1, 4, 4)
        >>> y = subsample_forward(x)
        >>> y.shape
        (1, 4, 2, 2)
        >>> y[0, 0].tolist(), y[0, 1].tolist()
        ([[0.0, 2.0], [8.0, 10.0]], [[5.0, 7.0], [13.0, 15.0]])
        >>> subsample_forward(subsample_forward(x)).shape
        (1, 16, 1, 1)
    """

    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"subsampling needs N x C x H x W with even H and W, got {x.shape}")
    n, c, h, w = x.shape
    phases = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 3, 5, 1, 2, 4).reshape(n, 4 * c, h // 2, w // 2)
    return np.ascontiguousarray(phases[:, _channel_order(c)])


def subsample_inverse(y):
    """Exact inverse of :func:`subsample_forward`."""
    if y.ndim != 4 or y.shape[1] % 4:
        raise ShapeError(f"inverse subsampling needs a channel count divisible by 4, got {y.shape}")
    n, c4, h, w = y.shape
    c = c4 // 4
    phases = y[:, np.argsort(_channel_order(c))]
    x = phases.reshape(n, 2, 2, c, h, w).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(x.reshape(n, c, 2 * h, 2 * w))


class Subsample(Module):
    """Parameter-free stage wrapping :func:`subsample_forward`."""

    def forward(self, x):
        return subsample_forward(x)

    def inverse(self, y):
        return subsample_inverse(y)

    def backward(self, x, dy, accumulate=True):
        return subsample_inverse(dy)

    def inverse_backward(self, x, dx, accumulate=True):
        return subsample_forward(x), subsample_forward(dx)


############################################################################
# Network


class InvertibleNet(Module):
    """A bijection ``C x H x W -> C' x H' x W'`` made of invertible stages.

    Args:
        stages (list): :class:`RevBlock` and :class:`Subsample` instances, applied in order.
        input_shape (tuple of int): Per-example input shape ``(C, H, W)``.
        name (str, optional): Preset name, for logs.
    """

    def __init__(self, stages, input_shape, name=""):
        super().__init__()
        self.stages = list(stages)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.name = name
        for i, stage in enumerate(self.stages):
            self.add_child(str(i), stage)
        self.latent_shape = self._trace_shape()

    def _trace_shape(self):
        c, h, w = self.input_shape
        for i, stage in enumerate(self.stages):
            if isinstance(stage, Subsample):
                if h % 2 or w % 2:
                    raise ShapeError(f"stage {i}: cannot subsample spatial extent {h}x{w}")
                c, h, w = 4 * c, h // 2, w // 2
            elif c % 2:
                raise ShapeError(f"stage {i}: reversible block needs an even channel count, got {c}")
        return (c, h, w)

    @property
    def latent_dim(self):
        return int(np.prod(self.latent_shape))

    @property
    def dtype(self):
        """Parameter dtype; f32 for a network without blocks."""
        for p in self.named_params().values():
            return p.dtype
        return np.dtype(np.float32)

    @property
    def blocks(self):
        return [s for s in self.stages if isinstance(s, RevBlock)]

    def _check(self, x, shape, what):
        if x.ndim != 4 or x.shape[1:] != shape:
            raise ShapeError(f"{what} expects N x {' x '.join(map(str, shape))}, got {x.shape}")

    def forward(self, x):
        self._check(x, self.input_shape, "forward")
        for stage in self.stages:
            x = stage.forward(x)
        return x

    def inverse(self, z):
        self._check(z, self.latent_shape, "inverse")
        for stage in reversed(self.stages):
            z = stage.inverse(z)
        return z

    def encode(self, x):
        """Forward pass returning flat ``N x d`` latents."""
        return self.forward(x).reshape(x.shape[0], -1)

    def decode(self, z):
        """Inverse pass from flat ``N x d`` latents."""
        return self.inverse(z.reshape((z.shape[0],) + self.latent_shape))

    def forward_cached(self, x):
        """Forward pass keeping every stage input.

        Returns:
            tuple: ``(z, inputs)`` where ``inputs[i]`` is the input of stage i.
        """

        self._check(x, self.input_shape, "forward")
        inputs = []
        for stage in self.stages:
            inputs.append(x)
            x = stage.forward(x)
        return x, inputs

    def backward_cached(self, inputs, dz, accumulate=True):
        """Reference backward pass over the inputs stored by :meth:`forward_cached`."""
        for stage, x in zip(reversed(self.stages), reversed(inputs)):
            dz = stage.backward(x, dz, accumulate)
        return dz

    def backward_recompute(self, z, dz, accumulate=True):
        """Backward pass from the output alone, rebuilding stage inputs by inversion.

        Args:
            z (numpy.ndarray): Network output ``N x C' x H' x W'``.
            dz (numpy.ndarray): dL/dz, same shape.
            accumulate (bool, optional): Add parameter gradients to the gradient buffers.

        Returns:
            numpy.ndarray: dL/dx.
        """

        self._check(z, self.latent_shape, "backward")
        for stage in reversed(self.stages):
            x = stage.inverse(z)
            dz = stage.backward(x, dz, accumulate)
            z = x
        return dz

    def inverse_backward(self, x, dx, accumulate=True):
        """Backward pass through :meth:`inverse`, given its output x and dL/dx.

        Stage inputs of the inverse pass are rebuilt with the forward map, so
        retained buffers stay constant in depth.

        Returns:
            numpy.ndarray: dL/dz for the latent that decoded to x.
        """

        self._check(x, self.input_shape, "inverse backward")
        for stage in self.stages:
            y, dx = stage.inverse_backward(x, dx, accumulate)
            x = y
        return dx


def net_forward(net, x):
    return net.forward(x)


def net_inverse(net, z):
    return net.inverse(z)


def net_backward_recompute(net, z, dz):
    """Accumulates parameter gradients of net from its output z and dL/dz; returns dL/dx."""
    return net.backward_recompute(z, dz)


def net_inverse_backward(net, x, dx):
    """Accumulates parameter gradients through the decoder; returns dL/dz."""
    return net.inverse_backward(x, dx)


def build_architecture(spec, rng=None, dtype="f32", input_shape=None):
    """Builds an :class:`InvertibleNet` from a stage description.

    Args:
        spec (dict): ``{"name", "input_shape", "stages"}``; each stage is
            ``{"kind": "subsample"}`` or ``{"kind": "block", "width", "kernel", "count"}``.
        rng (Rng, optional): Initialization stream; all weights are zero if None.
        dtype (str, optional): Parameter dtype. Defaults to ``"f32"``.
        input_shape (tuple of int, optional): Overrides ``spec["input_shape"]``.

    Returns:
        InvertibleNet: The network.

    Raises:
        ShapeError: If the channel or spatial arithmetic of the stages is inconsistent.

    Examples:
        >>> spec = {"name": "tiny", "input_shape": [1, 4, 4], "stages": [
        ...     {"kind": "subsample"}, {"kind": "block", "width": 8, "kernel": 3, "count": 2}]}
        >>> net = build_architecture(spec)
        >>> net.latent_shape, len(net.blocks), net.num_params()
        ((4, 2, 2), 2, 1192)
    """

    shape = tuple(input_shape or spec["input_shape"])
    if len(shape) != 3:
        raise ShapeError(f"input shape must be (C, H, W), got {shape}")
    c, h, w = shape
    stages = []
    for group in spec["stages"]:
        kind = group.get("kind")
        if kind == "subsample":
            if h % 2 or w % 2:
                raise ShapeError(f"cannot subsample spatial extent {h}x{w} in preset {spec.get('name')}")
            stages.append(Subsample())
            c, h, w = 4 * c, h // 2, w // 2
        elif kind == "block":
            if c % 2:
                raise ShapeError(f"reversible block needs an even channel count, got {c} in preset {spec.get('name')}")
            for _ in range(int(group.get("count", 1))):
                i = len(stages)
                brng = rng and rng.spawn(f"stage{i}")
                f = conv_branch(c // 2, group["width"], group["kernel"], brng and brng.spawn("F"), dtype)
                g = conv_branch(c // 2, group["width"], group["kernel"], brng and brng.spawn("G"), dtype)
                stages.append(RevBlock(f, g))
        else:
            raise ShapeError(f"unknown stage kind {kind!r}")
    net = InvertibleNet(stages, shape, name=spec.get("name", ""))
    _logger.info(
        "Built %s: %d stages, %d parameters, latent %s",
        net.name or "net",
        len(stages),
        net.num_params(),
        net.latent_shape,
    )
    return net
