"""Training objectives and their gradients.

Losses that involve the network take flat encodings ``z`` (``N x d``) and
return the gradient with respect to ``z`` alongside a :class:`LossReport`.
Gradients through the decoder are accumulated into the network as a side
effect; gradients through the encoder are accumulated only when
``propagate=True``, so a training step can sum several latent gradients and
run the encoder backward pass once.
"""

import logging

import attr
import numpy as np

from .latent import clip_mask, clip_to_prior
from .tensor import ensure_finite, sample_normal

_logger = logging.getLogger(__name__)

COMPONENTS = ("recon_l1", "clip_l2", "adv_disc", "adv_enc", "perturb", "ot")


@attr.s
class LossReport:
    """Named loss components and the weights that make up their total.

    A component with no declared weight counts with weight 1.

    Examples:
        >>> r = LossReport({"recon_l1": 0.5, "clip_l2": 0.25}, {"clip_l2": 2.0})
        >>> r.total
        1.0
        >>> (r + LossReport({"adv_enc": -1.0})).total
        0.0
    """

    components = attr.ib(factory=dict)
    weights = attr.ib(factory=dict)

    @property
    def total(self):
        return float(sum(self.weights.get(k, 1.0) * v for k, v in self.components.items()))

    def __add__(self, other):
        return LossReport({**self.components, **other.components}, {**self.weights, **other.weights})

    def __getitem__(self, name):
        return self.components[name]

    def check_finite(self):
        """Raises NumericalError naming the first non-finite component."""
        for name, value in self.components.items():
            ensure_finite(np.asarray(value), f"loss {name}")
        return self


def _as_4d(net, z):
    return z.reshape((z.shape[0],) + net.latent_shape)


def _l1_and_grad(x, xr):
    diff = xr - x
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


############################################################################
# Reconstruction


def recon_loss(net, prior, x, l1_weight=1.0, l2_weight=1.0, z=None, propagate=True):
    """L1 reconstruction from clipped encodings plus the L2 clipping penalty.

    ``recon_l1 = mean|x - R^-1(clip(z))|`` and ``clip_l2 = mean (z - clip(z))^2``
    with ``z = R(x)``.

    Args:
        net (InvertibleNet): Network R.
        prior (PriorSpec): Prior whose support defines the clipping.
        x (numpy.ndarray): Input batch.
        l1_weight (float, optional): Weight of ``recon_l1``.
        l2_weight (float, optional): Weight of ``clip_l2``.
        z (numpy.ndarray, optional): Precomputed flat encodings of x.
        propagate (bool, optional): Also backpropagate through the encoder.

    Returns:
        tuple: ``(report, dz)`` with dz the weighted gradient with respect to z.
    """

    if z is None:
        z = net.encode(x)
    zc = clip_to_prior(z, prior)
    xr = net.decode(zc)
    l1, dxr = _l1_and_grad(x, xr)
    dzc = net.inverse_backward(xr, l1_weight * dxr).reshape(z.shape)
    resid = z - zc
    l2 = float(np.mean(np.square(resid)))
    dz = dzc * clip_mask(z, prior) + l2_weight * 2.0 * resid / resid.size
    if propagate:
        net.backward_recompute(_as_4d(net, z), _as_4d(net, dz))
    report = LossReport({"recon_l1": l1, "clip_l2": l2}, {"recon_l1": l1_weight, "clip_l2": l2_weight})
    return report, dz.astype(z.dtype, copy=False)


def perturbation_loss(net, x, noise_std, rng=None, weight=1.0, z=None, eps=None, propagate=True):
    """L1 error of decoding a perturbed encoding: ``mean|x - R^-1(R(x) + eps)|``.

    Args:
        net (InvertibleNet): Network R.
        x (numpy.ndarray): Input batch.
        noise_std (float): Std of the Gaussian perturbation.
        rng (Rng, optional): Noise stream; required unless eps is given.
        weight (float, optional): Weight of the ``perturb`` component.
        z (numpy.ndarray, optional): Precomputed flat encodings of x.
        eps (numpy.ndarray, optional): Fixed perturbation, shaped like z.
        propagate (bool, optional): Also backpropagate through the encoder.

    Returns:
        tuple: ``(report, dz)``.
    """

    if z is None:
        z = net.encode(x)
    if eps is None:
        eps = sample_normal(rng, z.shape, 0.0, noise_std, dtype=z.dtype)
    xr = net.decode(z + eps)
    loss, dxr = _l1_and_grad(x, xr)
    dz = net.inverse_backward(xr, weight * dxr).reshape(z.shape)
    if propagate:
        net.backward_recompute(_as_4d(net, z), _as_4d(net, dz))
    return LossReport({"perturb": loss}, {"perturb": weight}), dz.astype(z.dtype, copy=False)


############################################################################
# Adversarial hinge losses


def hinge_disc_from_scores(s_prior, s_enc):
    """Discriminator hinge loss from raw scores, with gradients.

    Examples:
        >>> loss, _, _ = hinge_disc_from_scores(np.zeros(4), np.zeros(4))
        >>> loss
        2.0
        >>> hinge_disc_from_scores(np.ones(2), -np.ones(2))[0]
        0.0
    """

    loss = -float(np.mean(np.minimum(0.0, -1.0 + s_prior))) - float(np.mean(np.minimum(0.0, -1.0 - s_enc)))
    ds_prior = -(s_prior < 1.0).astype(s_prior.dtype) / len(s_prior)
    ds_enc = (s_enc > -1.0).astype(s_enc.dtype) / len(s_enc)
    return loss + 0.0, ds_prior, ds_enc


def hinge_enc_from_scores(s_enc):
    """Encoder loss ``-mean(s_enc)`` and its gradient.

    Examples:
        >>> hinge_enc_from_scores(np.full(3, 0.5))[0]
        -0.5
    """

    return -float(np.mean(s_enc)), np.full_like(s_enc, -1.0 / len(s_enc))


def hinge_disc_loss(disc, z_prior, z_enc):
    """``L_D`` for active-dim latents of prior samples and encodings."""
    return hinge_disc_from_scores(disc.forward(z_prior), disc.forward(z_enc))[0]


def hinge_enc_loss(disc, z_enc):
    """``L_E`` for active-dim encodings."""
    return hinge_enc_from_scores(disc.forward(z_enc))[0]
