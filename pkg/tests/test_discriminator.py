import numpy as np
import pytest

from revgen.digests import array_digest
from revgen.discriminator import Discriminator, disc_forward, disc_step
from revgen.exceptions import ShapeError
from revgen.gradcheck import max_relative_error, numeric_gradient
from revgen.losses import hinge_disc_loss
from revgen.optim import AdamState
from revgen.tensor import Rng, sample_normal


def test_zero_weights_score_zero():
    disc = Discriminator(3, 4, 5, spectral_norm=False, dtype="f64")
    assert disc.forward(np.ones((6, 3))).tolist() == [0.0] * 6


def test_layer_widths():
    disc = Discriminator(3, 4, 5, rng=Rng(0), dtype="f64")
    shapes = [w.shape for w in disc.effective_weights()]
    assert shapes == [(4, 3), (5, 8), (1, 5)]
    assert disc.forward(np.zeros((2, 3))).shape == (2,)
    with pytest.raises(ShapeError):
        disc.forward(np.zeros((2, 4)))


def test_spectral_norm_needs_rng():
    with pytest.raises(ShapeError):
        Discriminator(2, 3, 3)


def test_effective_weights_have_unit_spectral_norm():
    disc = Discriminator(6, 16, 12, rng=Rng(1), power_warmup=300, dtype="f64")
    for w in disc.effective_weights():
        assert np.linalg.norm(w, 2) == pytest.approx(1.0, abs=1e-6)


def test_discriminator_input_gradient():
    disc = Discriminator(3, 4, 5, rng=Rng(2), power_warmup=50, dtype="f64")
    z = sample_normal(Rng(3), (4, 3))
    c = sample_normal(Rng(4), (4,))
    dz = disc.backward(z, c)
    num = numeric_gradient(lambda: float(np.sum(disc.forward(z) * c)), z)
    assert max_relative_error(dz.reshape(-1), num) < 1e-6


def test_disc_step_separates_clusters():
    disc = Discriminator(1, 8, 8, rng=Rng(5), power_warmup=50, dtype="f64")
    adam = AdamState(lr=0.01)
    z_prior = 2.0 + 0.1 * sample_normal(Rng(6), (32, 1))
    z_enc = -2.0 + 0.1 * sample_normal(Rng(7), (32, 1))
    before = hinge_disc_loss(disc, z_prior, z_enc)
    for _ in range(150):
        report = disc_step(disc, z_prior, z_enc, adam)
    assert report.weights["adv_disc"] == 0.0
    assert hinge_disc_loss(disc, z_prior, z_enc) < before
    assert adam.step == 150


def test_disc_step_leaves_encodings_untouched():
    disc = Discriminator(2, 4, 4, rng=Rng(8), power_warmup=10, dtype="f64")
    z_enc = sample_normal(Rng(9), (5, 2))
    snapshot = z_enc.copy()
    disc_step(disc, sample_normal(Rng(10), (5, 2)), z_enc, AdamState(lr=0.01))
    assert np.array_equal(z_enc, snapshot)


def test_disc_step_leaves_network_gradients_untouched(tiny_net):
    x = sample_normal(Rng(11), (4, 1, 4, 4))
    z = tiny_net.encode(x)
    tiny_net.zero_grad()
    before = array_digest(tiny_net.named_grads())
    disc = Discriminator(3, 4, 4, rng=Rng(12), power_warmup=10, dtype="f64")
    disc_step(disc, sample_normal(Rng(13), (4, 3)), z[:, [0, 5, 9]], AdamState(lr=0.01))
    assert array_digest(tiny_net.named_grads()) == before


def test_disc_learns_separable_clouds_and_stays_lipschitz():
    disc = Discriminator(4, rng=Rng(14), dtype="f64")
    adam = AdamState(lr=4e-4)
    z_prior = sample_normal(Rng(15), (64, 4))
    z_enc = np.full((64, 4), 10.0)
    for _ in range(200):
        disc_step(disc, z_prior, z_enc, adam)
    assert hinge_disc_loss(disc, z_prior, z_enc) < 0.1
    for w in disc.effective_weights():
        assert np.linalg.norm(w, 2) <= 1 + 1e-2
    a = sample_normal(Rng(16), (256, 4), std=5.0)
    b = sample_normal(Rng(17), (256, 4), std=5.0)
    gap = np.abs(disc_forward(disc, a) - disc_forward(disc, b))
    assert np.all(gap <= 1.05 * np.linalg.norm(a - b, axis=1))
