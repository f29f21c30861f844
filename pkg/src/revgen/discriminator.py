"""Latent-space adversary: a spectrally normalized MLP scoring active-dim latents.

Architecture: Dense(k -> h1), CReLU (width 2*h1), Dense(2*h1 -> h2), ReLU,
Dense(h2 -> 1). Every Dense is wrapped in :class:`~revgen.layers.SpectralNorm`
unless ``spectral_norm=False``. Scores are raw and unbounded.
"""

import logging

import numpy as np

from .exceptions import ShapeError
from .layers import CReLU, Dense, Module, ReLU, Sequential, SpectralNorm
from .losses import LossReport, hinge_disc_from_scores
from .optim import adam_step

_logger = logging.getLogger(__name__)


class Discriminator(Module):
    """Scores ``n x k`` latents with one raw value each.

    Args:
        k (int): Input width (number of active prior dims).
        hidden1 (int, optional): Width of the first Dense layer before CReLU. Defaults to 400.
        hidden2 (int, optional): Width of the second Dense layer. Defaults to 800.
        rng (Rng, optional): Initialization stream; zero weights if None.
        spectral_norm (bool, optional): Wrap every Dense in SpectralNorm. Defaults to True.
        power_warmup (int, optional): Power iterations run per layer at construction.
        dtype (str, optional): Parameter dtype. Defaults to ``"f32"``.
    """

    def __init__(self, k, hidden1=400, hidden2=800, rng=None, spectral_norm=True, power_warmup=200, dtype="f32"):
        super().__init__()
        self.k = k
        self.spectral_norm = spectral_norm
        dense = [
            Dense(k, hidden1, rng=rng and rng.spawn("dense0"), dtype=dtype),
            Dense(2 * hidden1, hidden2, rng=rng and rng.spawn("dense1"), dtype=dtype),
            Dense(hidden2, 1, rng=rng and rng.spawn("dense2"), dtype=dtype),
        ]
        if spectral_norm:
            if rng is None:
                raise ShapeError("a spectrally normalized discriminator needs an rng for its power-iteration vectors")
            dense = [
                SpectralNorm(d, rng.spawn(f"sn{i}"), warmup=power_warmup) for i, d in enumerate(dense)
            ]
        self.normalized = [d for d in dense if isinstance(d, SpectralNorm)]
        self.net = self.add_child("net", Sequential([dense[0], CReLU(), dense[1], ReLU(), dense[2]]))

    def _check(self, z):
        if z.ndim != 2 or z.shape[1] != self.k:
            raise ShapeError(f"discriminator expects n x {self.k} latents, got {z.shape}")

    def power_iterate(self):
        """One power-iteration update on every spectrally normalized layer."""
        for layer in self.normalized:
            layer.power_iterate()

    def forward(self, z, update_u=False):
        self._check(z)
        if update_u:
            self.power_iterate()
        return self.net.forward(z)[:, 0]

    def backward(self, z, ds, accumulate=True):
        """Gradient with respect to z given dL/dscores (length n)."""
        self._check(z)
        return self.net.backward(z, ds[:, None].astype(z.dtype, copy=False), accumulate)

    def effective_weights(self):
        """Weights as applied by forward, one per Dense layer."""
        if self.spectral_norm:
            return [layer.effective_weight() for layer in self.normalized]
        return [layer.weight for layer in self.net.layers if isinstance(layer, Dense)]


def disc_forward(disc, z_active):
    """Raw scores of ``n x k`` active-dim latents."""
    return disc.forward(z_active)


def disc_step(disc, z_prior, z_enc, adam):
    """One discriminator update against the hinge loss.

    Both batches go through a single forward pass after one power-iteration
    update. The encodings are plain arrays, so nothing flows back into the
    network that produced them.

    Args:
        disc (Discriminator): Discriminator, updated in place.
        z_prior (numpy.ndarray): Active-dim prior samples, ``n x k``.
        z_enc (numpy.ndarray): Active-dim encodings, ``m x k``.
        adam (AdamState): The discriminator's optimizer state.

    Returns:
        LossReport: ``adv_disc`` measured before the update; weight 0 so it does
        not count towards the network's total.
    """

    z = np.concatenate([z_prior, z_enc]).astype(disc.net.layers[0].weight.dtype, copy=False)
    disc.power_iterate()
    disc.zero_grad()
    scores = disc_forward(disc, z)
    n = len(z_prior)
    loss, ds_prior, ds_enc = hinge_disc_from_scores(scores[:n], scores[n:])
    disc.backward(z, np.concatenate([ds_prior, ds_enc]))
    adam_step(adam, disc.named_params(), disc.named_grads())
    return LossReport({"adv_disc": loss}, {"adv_disc": 0.0}).check_finite()
