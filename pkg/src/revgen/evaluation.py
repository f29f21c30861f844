"""Evaluation: Fréchet feature distance, sampling, interpolation, latent
traversal, effective dimensions and reconstructions.

The Fréchet distance here is computed over a pluggable feature map (by
default the penultimate layer of a small classifier trained on the data), so
its values are not comparable to Inception-based scores.
"""

import enum
import logging

import attr
import numpy as np
from scipy import linalg

from .data import batch_iterator
from .exceptions import NumericalError, ShapeError
from .latent import PriorFamily, PriorSpec, clip_to_prior, encode_batched, sample_class_prior, sample_prior
from .layers import Dense, ReLU, Sequential
from .optim import AdamState, adam_step
from .tensor import Rng

_logger = logging.getLogger(__name__)

InterpolationMode = enum.Enum("InterpolationMode", "RESTRICTED FULL")
"""Interpolate clipped encodings (restricted) or raw encodings (full)."""

_EIG_RTOL = 1e-10
_PSD_TOL = 1e-8
_DECODE_BATCH = 256


@attr.s(frozen=True, eq=False)
class GaussianFit:
    """Mean and covariance of a feature distribution."""

    mean = attr.ib(converter=lambda v: np.atleast_1d(np.asarray(v, dtype=np.float64)))
    covariance = attr.ib(converter=lambda v: np.atleast_2d(np.asarray(v, dtype=np.float64)))

    @covariance.validator
    def _check(self, attribute, cov):
        d = len(self.mean)
        if cov.shape != (d, d):
            raise ShapeError(f"covariance of shape {cov.shape} does not match mean of length {d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(cov).max(initial=0)))):
            raise ShapeError("covariance is not symmetric")

    @property
    def dim(self):
        return len(self.mean)


def fit_gaussian(features):
    """Empirical mean and covariance (denominator n - 1) of ``n x d`` features.

    Examples:
        >>> fit = fit_gaussian(np.array([[0.0], [2.0]]))
        >>> fit.mean.tolist(), fit.covariance.tolist()
        ([1.0], [[2.0]])
    """

    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) < 2:
        raise ShapeError(f"need at least 2 feature vectors of shape n x d, got {f.shape}")
    mean = f.mean(axis=0)
    centered = f - mean
    cov = centered.T @ centered / (len(f) - 1)
    return GaussianFit(mean, (cov + cov.T) / 2)


def feature_fit(images, feature_fn):
    """Gaussian fit of ``feature_fn(images)``."""
    return fit_gaussian(feature_fn(images))


def _check_psd(cov, w=None):
    if w is None:
        w = linalg.eigvalsh(cov)
    scale = max(1.0, float(np.abs(w).max(initial=0)))
    if w.min(initial=0) < -_PSD_TOL * scale:
        raise NumericalError(f"covariance is indefinite (smallest eigenvalue {w.min():.3g})")


def _psd_sqrt(cov):
    w, v = linalg.eigh(cov)
    _check_psd(cov, w)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a, b):
    """Squared Fréchet distance between two Gaussians.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``, with the
    inner square root taken over eigenvalues clamped at zero.

    Raises:
        NumericalError: Either covariance has an eigenvalue below ``-1e-8``
            times its largest magnitude.

    Examples:
        >>> frechet_distance(GaussianFit([0.0], [[1.0]]), GaussianFit([2.0], [[1.0]]))
        4.0
        >>> frechet_distance(GaussianFit([0.0], [[1.0]]), GaussianFit([0.0], [[4.0]]))
        1.0
    """

    if a.dim != b.dim:
        raise ShapeError(f"cannot compare Gaussians of dimension {a.dim} and {b.dim}")
    sa = _psd_sqrt(a.covariance)
    _check_psd(b.covariance)
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.covariance, b.covariance):
        return 0.0
    m = sa @ b.covariance @ sa
    w = linalg.eigvalsh((m + m.T) / 2)
    top = float(w.max(initial=0))
    w = np.where(w > _EIG_RTOL * top, w, 0.0)
    mean_term = float(np.sum(np.square(a.mean - b.mean)))
    trace_term = float(np.trace(a.covariance) + np.trace(b.covariance) - 2 * np.sum(np.sqrt(w)))
    d2 = mean_term + trace_term
    scale = mean_term + float(np.trace(a.covariance) + np.trace(b.covariance))
    return 0.0 if d2 <= 1e-13 * scale else d2


############################################################################
# Feature maps


def flatten(images):
    return np.asarray(images).reshape(len(images), -1)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits.

    Examples:
        >>> loss, _ = softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
        >>> round(loss, 6)
        0.693147
    """

    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(logits.dtype)


class FeatureClassifier:
    """Small MLP classifier; its penultimate activations are the default feature map.

    Args:
        d_in (int): Flattened input size.
        num_classes (int): Number of classes.
        rng (Rng): Initialization stream.
        hidden (tuple of int, optional): Hidden widths.
    """

    def __init__(self, d_in, num_classes, rng, hidden=(128, 64)):
        h1, h2 = hidden
        self.body = Sequential(
            [Dense(d_in, h1, rng=rng.spawn("dense0")), ReLU(), Dense(h1, h2, rng=rng.spawn("dense1")), ReLU()]
        )
        self.head = Dense(h2, num_classes, rng=rng.spawn("dense2"))
        self.num_classes = num_classes

    def features(self, images):
        return self.body.forward(flatten(images).astype(np.float32))

    def logits(self, images):
        return self.head.forward(self.features(images))

    def predict(self, images):
        return np.argmax(self.logits(images), axis=1)

    def accuracy(self, images, labels):
        return float(np.mean(self.predict(images) == labels))

    def train(self, dataset, epochs, rng, batch=128, lr=1e-3):
        """Fits the classifier to a labeled dataset; returns the last epoch's mean loss."""
        params = {**self.body.named_params("body."), **self.head.named_params("head.")}
        grads = {**self.body.named_grads("body."), **self.head.named_grads("head.")}
        adam = AdamState(lr=lr, beta1=0.9, beta2=0.999)
        mean_loss = float("nan")
        for epoch in range(epochs):
            losses = []
            for idx in batch_iterator(dataset, batch, rng.spawn(f"epoch-{epoch}")):
                x = flatten(dataset.images[idx]).astype(np.float32)
                self.body.zero_grad()
                self.head.zero_grad()
                h = self.body.forward(x)
                loss, dlogits = softmax_cross_entropy(self.head.forward(h), dataset.labels[idx])
                self.body.backward(x, self.head.backward(h, dlogits))
                adam_step(adam, params, grads)
                losses.append(loss)
            mean_loss = float(np.mean(losses))
            _logger.info("Feature classifier epoch %d: loss %.4f", epoch + 1, mean_loss)
        return mean_loss


def build_feature_fn(kind, dataset=None, epochs=3, seed=0):
    """Returns ``(feature_fn, classifier)``; classifier is None for the identity map."""
    if kind == "identity":
        return flatten, None
    if dataset is None or dataset.labels is None:
        raise ShapeError("the classifier feature map needs a labeled dataset")
    clf = FeatureClassifier(int(np.prod(dataset.shape)), dataset.num_classes, Rng(seed, "classifier"))
    clf.train(dataset, epochs, Rng(seed, "classifier-data"))
    return clf.features, clf


############################################################################
# Generation


def decode_batched(net, z, batch=_DECODE_BATCH):
    return np.concatenate([net.decode(z[i : i + batch]) for i in range(0, len(z), batch)])


def generate_samples(net, prior, rng, n):
    """Decodes n prior draws. Values are raw; nothing is clamped."""
    return decode_batched(net, sample_prior(prior, rng, n, dtype=net.dtype))


def generate_class_samples(net, class_prior, cls, rng, n):
    """Decodes n draws from class cls's learned Gaussian."""
    z, _ = sample_class_prior(class_prior, cls, rng, n)
    return decode_batched(net, z)


def interpolate(net, prior, x_a, x_b, steps, mode=InterpolationMode.RESTRICTED):
    """Decodes a linear path between the encodings of two inputs.

    Args:
        net (InvertibleNet): Network.
        prior (PriorSpec): Prior used to clip in restricted mode.
        x_a, x_b (numpy.ndarray): Single inputs, ``C x H x W``.
        steps (int): Number of images, endpoints included; at least 2.
        mode (InterpolationMode or str, optional): ``restricted`` or ``full``.

    Returns:
        numpy.ndarray: ``steps x C x H x W``.
    """

    if steps < 2:
        raise ShapeError(f"interpolation needs at least 2 steps, got {steps}")
    mode = mode if isinstance(mode, InterpolationMode) else InterpolationMode[str(mode).upper()]
    z = net.encode(np.stack([x_a, x_b]))
    if mode is InterpolationMode.RESTRICTED:
        z = clip_to_prior(z, prior)
    t = np.linspace(0.0, 1.0, steps, dtype=z.dtype)[:, None]
    return decode_batched(net, (1 - t) * z[0] + t * z[1])


def _family_std(prior):
    return 1.0 if prior.family is PriorFamily.NORMAL else 4.0 / np.sqrt(12.0)


def traverse_dimension(net, prior, dim, range_stds=3.0, steps=7, base=None, std=None):
    """Decodes a sweep of one latent dim over ``base[dim] +- range_stds * std``.

    Args:
        net (InvertibleNet): Network.
        prior (PriorSpec or None): Restricted prior; dim must be active in it.
            With None, base and std must be given (class-conditional sweeps).
        dim (int): Latent dim to vary.
        range_stds (float, optional): Half-width of the sweep in stds. Defaults to 3.
        steps (int, optional): Number of images. Defaults to 7.
        base (numpy.ndarray, optional): Latent held fixed; zero by default.
        std (float, optional): Std of the dim; the prior family's by default.

    Returns:
        numpy.ndarray: ``steps x C x H x W``.
    """

    if isinstance(prior, PriorSpec):
        if dim not in prior.active_dims:
            raise ShapeError(f"latent dim {dim} is not active in the prior")
        std = _family_std(prior) if std is None else std
    elif base is None or std is None:
        raise ShapeError("a traversal without a prior needs an explicit base latent and std")
    dtype = net.dtype
    z0 = np.zeros(net.latent_dim, dtype=dtype) if base is None else np.asarray(base, dtype=dtype)
    offsets = np.linspace(-range_stds * std, range_stds * std, steps)
    z = np.repeat(z0[None], steps, axis=0)
    z[:, dim] = z0[dim] + offsets
    return decode_batched(net, z)


def traverse_class_dimension(net, class_prior, cls, dim, range_stds=3.0, steps=7):
    """Sweeps dim around class cls's learned mean by its learned std."""
    return traverse_dimension(
        net, None, dim, range_stds, steps, base=class_prior.means[cls], std=float(class_prior.stds[cls, dim])
    )


def count_effective(stds, threshold):
    """Per row, the number of stds above ``threshold`` times the row's max.

    The comparison is strict, so a row of all-zero stds counts 0 effective dims.

    Examples:
        >>> count_effective(np.array([[1.0, 0.5, 1e-6]]), 0.01).tolist()
        [2]
        >>> count_effective(np.ones((2, 3)), 0.01).tolist()
        [3, 3]
    """

    stds = np.atleast_2d(np.asarray(stds, dtype=np.float64))
    return (stds > threshold * stds.max(axis=1, keepdims=True)).sum(axis=1)


def effective_dims(class_prior, threshold=0.01):
    """Number of latent dims each class actually uses."""
    return [int(c) for c in count_effective(class_prior.stds, threshold)]


def reconstruct(net, prior, x):
    """Original, restricted and full reconstructions of a batch.

    Returns:
        tuple: ``(x, R^-1(clip(R(x))), R^-1(R(x)))``.
    """

    z = net.encode(x)
    return x, net.decode(clip_to_prior(z, prior)), net.decode(z)


def roundtrip_l1(net, x):
    """Mean absolute error of decoding the full encoding of x."""
    return float(np.mean(np.abs(decode_batched(net, encode_batched(net, x)) - x)))


def frechet_feature_distance(real, fake, feature_fn):
    """Fréchet distance between Gaussian fits of the features of two image sets."""
    return frechet_distance(feature_fit(real, feature_fn), feature_fit(fake, feature_fn))

