"""Latent priors: the restricted prior with its clipping operator, and
learnable class-conditional Gaussians.

The restricted prior keeps ``k`` active dimensions of a ``d``-dimensional
latent space and fixes the others at zero. :func:`clip_to_prior` projects an
encoding onto its support.
"""

import enum
import logging

import attr
import numpy as np
from scipy.special import expit

from .exceptions import DataError, ShapeError
from .layers import Module
from .tensor import as_dtype, sample_normal, std_per_dim

_logger = logging.getLogger(__name__)

PriorFamily = enum.Enum("PriorFamily", "NORMAL UNIFORM")
"""Distribution of the active latent dimensions: standard normal or uniform(-2, 2)."""

MIN_SELECT_SAMPLES = 1000
_RAW_STD_FLOOR = -1e4  # softplus of this is exactly 0 in f32 and f64
_ENCODE_BATCH = 256


def _as_family(family):
    return family if isinstance(family, PriorFamily) else PriorFamily[str(family).upper()]


@attr.s(frozen=True)
class PriorSpec:
    """A prior supported on ``k`` active dims, all other dims zero.

    Examples:
        >>> p = PriorSpec(d_total=4, active_dims=[1, 3])
        >>> p.k, p.family.name, p.clip_bound
        (2, 'NORMAL', 2.0)
        >>> PriorSpec(d_total=4, active_dims=[1, 1])
        Traceback (most recent call last):
        ...
        revgen.exceptions.ShapeError: active dims must be distinct and within [0, 4), got (1, 1)
    """

    d_total = attr.ib(converter=int)
    active_dims = attr.ib(converter=lambda v: tuple(int(i) for i in v))
    family = attr.ib(default=PriorFamily.NORMAL, converter=_as_family)
    clip_bound = attr.ib(default=2.0, converter=float)

    @active_dims.validator
    def _check_active_dims(self, attribute, value):
        if len(set(value)) != len(value) or any(not 0 <= i < self.d_total for i in value):
            raise ShapeError(f"active dims must be distinct and within [0, {self.d_total}), got {value}")

    @clip_bound.validator
    def _check_bound(self, attribute, value):
        if not value > 0:
            raise ShapeError(f"clip bound must be positive, got {value}")

    @property
    def k(self):
        return len(self.active_dims)

    @property
    def index(self):
        return np.asarray(self.active_dims, dtype=np.intp)


def encode_batched(net, x, batch=_ENCODE_BATCH):
    """Flat encodings of x computed in batches."""
    return np.concatenate([net.encode(x[i : i + batch]) for i in range(0, len(x), batch)])


def top_k_by_std(stds, k):
    """Indices of the k largest stds, largest first; ties go to the lower index.

    Examples:
        >>> top_k_by_std(np.array([0.1, 3.0, 2.0]), 2).tolist()
        [1, 2]
        >>> top_k_by_std(np.array([1.0, 1.0, 1.0]), 2).tolist()
        [0, 1]
    """

    if not 0 < k <= len(stds):
        raise ShapeError(f"cannot select {k} of {len(stds)} dimensions")
    return np.argsort(-np.asarray(stds), kind="stable")[:k]


def select_active_dims(net, x, k):
    """Chooses the k latent dims whose encodings of x vary most under net.

    Args:
        net (InvertibleNet): Untrained network.
        x (numpy.ndarray): Sample of inputs; at least 1000 are expected.
        k (int): Number of active dims.

    Returns:
        list of int: Selected dims in increasing order.
    """

    if k > net.latent_dim:
        raise ShapeError(f"cannot select {k} active dims from a {net.latent_dim}-dimensional latent")
    if len(x) < MIN_SELECT_SAMPLES:
        _logger.warning("Selecting active dims from only %d samples; std estimates may be unstable", len(x))
    stds = std_per_dim(encode_batched(net, x).astype(np.float64))
    dims = sorted(int(i) for i in top_k_by_std(stds, k))
    _logger.info("Selected %d active dims; std range %.4g..%.4g", k, stds[dims].min(), stds[dims].max())
    return dims


def clip_to_prior(z, prior):
    """Projects flat encodings onto the prior's support.

    Examples:
        >>> p = PriorSpec(d_total=4, active_dims=[1, 3])
        >>> clip_to_prior(np.array([[5.0, 1.5, -7.0, -3.0]]), p).tolist()
        [[0.0, 1.5, 0.0, -2.0]]
    """

    if z.ndim != 2 or z.shape[1] != prior.d_total:
        raise ShapeError(f"expected N x {prior.d_total} encodings, got {z.shape}")
    out = np.zeros_like(z)
    idx = prior.index
    out[:, idx] = np.clip(z[:, idx], -prior.clip_bound, prior.clip_bound)
    return out


def clip_mask(z, prior):
    """Where :func:`clip_to_prior` passes gradient: active dims strictly inside the bound.

    Examples:
        >>> p = PriorSpec(d_total=3, active_dims=[0, 1])
        >>> clip_mask(np.array([[1.0, 2.0, 0.0]]), p).tolist()
        [[True, False, False]]
    """

    mask = np.zeros(z.shape, dtype=bool)
    idx = prior.index
    mask[:, idx] = np.abs(z[:, idx]) < prior.clip_bound
    return mask


def sample_prior(prior, rng, n, dtype="f32"):
    """Draws n latents: active dims from the prior family, all others 0."""
    dt = as_dtype(dtype)
    out = np.zeros((n, prior.d_total), dtype=dt)
    if prior.family is PriorFamily.NORMAL:
        draws = sample_normal(rng, (n, prior.k), dtype=dtype)
    else:
        draws = rng.generator.uniform(-2.0, 2.0, size=(n, prior.k)).astype(dt)
    out[:, prior.index] = draws
    return out


############################################################################
# Class-conditional priors


def softplus(x):
    """``log(1 + exp(x))``, computed without overflow.

    Examples:
        >>> float(softplus(np.array(0.0)))
        0.6931471805599453
    """

    return np.logaddexp(0, x)


def softplus_inverse(y):
    """Inverse of :func:`softplus` for y >= 0; y == 0 maps to a large negative floor."""
    y = np.asarray(y, dtype=np.float64)
    out = np.full(y.shape, _RAW_STD_FLOOR)
    pos = y > 0
    out[pos] = y[pos] + np.log(-np.expm1(-y[pos]))
    return out


class ClassPrior(Module):
    """Uncorrelated Gaussians, one per class, with learnable means and stds.

    Stds are stored as raw values and passed through softplus when used, so
    they stay non-negative under unconstrained updates.

    Args:
        means (numpy.ndarray): ``classes x d`` initial means.
        stds (numpy.ndarray): ``classes x d`` initial stds, non-negative.
        dtype (str, optional): Parameter dtype. Defaults to ``"f32"``.
    """

    def __init__(self, means, stds, dtype="f32"):
        super().__init__()
        means, stds = np.asarray(means), np.asarray(stds)
        if means.shape != stds.shape or means.ndim != 2:
            raise ShapeError(f"means and stds must both be classes x d, got {means.shape} and {stds.shape}")
        if np.any(stds < 0):
            raise ShapeError("class prior stds must be non-negative")
        dt = as_dtype(dtype)
        self.means = self.add_param("means", means.astype(dt))
        self.raw_stds = self.add_param("raw_stds", softplus_inverse(stds).astype(dt))

    @property
    def num_classes(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def stds(self):
        return softplus(self.raw_stds)

    def _check_class(self, cls):
        if not 0 <= cls < self.num_classes:
            raise ShapeError(f"class {cls} outside [0, {self.num_classes})")


def init_class_priors(net, x, labels, num_classes=None, dtype="f32"):
    """Initializes per-class Gaussians from the encodings of x under net.

    Raises:
        DataError: If a class has no examples.
    """

    labels = np.asarray(labels)
    num_classes = int(num_classes if num_classes is not None else labels.max() + 1)
    z = encode_batched(net, x).astype(np.float64)
    means, stds = [], []
    for cls in range(num_classes):
        zc = z[labels == cls]
        if len(zc) == 0:
            raise DataError(f"class {cls} has no examples; cannot initialize its prior")
        if len(zc) < 2:
            _logger.warning("Class %d has a single example; its prior std starts at 0", cls)
        means.append(zc.mean(axis=0))
        stds.append(zc.std(axis=0))
    _logger.info("Initialized %d class priors over %d dims", num_classes, z.shape[1])
    return ClassPrior(np.stack(means), np.stack(stds), dtype=dtype)


def sample_class_prior(cp, cls, rng, n):
    """Draws n latents from class cls.

    Returns:
        tuple: ``(samples, eps)``; ``samples = mean + std * eps``. Keep eps for
        :func:`class_prior_backward`.
    """

    cp._check_class(cls)
    eps = sample_normal(rng, (n, cp.dim), dtype=cp.means.dtype)
    return cp.means[cls] + cp.stds[cls] * eps, eps


def class_prior_backward(cp, cls, eps, dsamples):
    """Accumulates gradients of the samples drawn with eps into class cls's mean and raw std."""
    cp._check_class(cls)
    cp._grads["means"][cls] += dsamples.sum(axis=0)
    cp._grads["raw_stds"][cls] += (dsamples * eps).sum(axis=0) * expit(cp.raw_stds[cls])


def top_dims_by_std(cp, k):
    """The k dims with the largest class-averaged std, largest first."""
    return [int(i) for i in top_k_by_std(cp.stds.mean(axis=0), k)]


def top_active_dims_by_std(net, prior, x, k):
    """The k active dims of prior whose encodings of x vary most, largest first."""
    stds = std_per_dim(encode_batched(net, x).astype(np.float64))[prior.index]
    return [prior.active_dims[i] for i in top_k_by_std(stds, k)]
