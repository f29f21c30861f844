import numpy as np
import pytest

from revgen.data import Dataset, synth_gaussian_mixture
from revgen.evaluation import (
    GaussianFit,
    InterpolationMode,
    build_feature_fn,
    count_effective,
    effective_dims,
    fit_gaussian,
    frechet_distance,
    frechet_feature_distance,
    generate_class_samples,
    generate_samples,
    interpolate,
    reconstruct,
    roundtrip_l1,
    softmax_cross_entropy,
    traverse_class_dimension,
    traverse_dimension,
)
from revgen.exceptions import NumericalError, ShapeError
from revgen.gradcheck import max_relative_error, numeric_gradient
from revgen.latent import ClassPrior, PriorFamily, PriorSpec
from revgen.revnet import build_architecture
from revgen.tensor import Rng, sample_normal


def identity_net(d):
    """A single zero-branch block: encode and decode are both the identity."""
    spec = {"input_shape": [d, 1, 1], "stages": [{"kind": "block", "width": 2, "kernel": 1, "count": 1}]}
    return build_architecture(spec, dtype="f64")


def test_frechet_closed_forms():
    a = GaussianFit([0.0, 0.0], np.diag([1.0, 4.0]))
    b = GaussianFit([1.0, 0.0], np.diag([9.0, 1.0]))
    assert frechet_distance(a, b) == pytest.approx(6.0)
    assert frechet_distance(a, a) == 0.0
    assert frechet_distance(GaussianFit([3.0], [[2.0]]), GaussianFit([3.0], [[2.0]])) == 0.0


def test_frechet_is_symmetric_and_nonnegative():
    fa = fit_gaussian(sample_normal(Rng(0), (200, 5)))
    fb = fit_gaussian(sample_normal(Rng(1), (200, 5), mean=0.3, std=2.0))
    d_ab, d_ba = frechet_distance(fa, fb), frechet_distance(fb, fa)
    assert d_ab > 0
    assert d_ab == pytest.approx(d_ba, rel=1e-8)


def test_frechet_handles_singular_covariances():
    a = GaussianFit([0.0, 0.0], np.diag([1.0, 0.0]))
    b = GaussianFit([0.0, 0.0], np.diag([0.0, 1.0]))
    assert frechet_distance(a, b) == pytest.approx(2.0)
    with pytest.raises(NumericalError):
        frechet_distance(GaussianFit([0.0, 0.0], np.diag([1.0, -1.0])), b)
    with pytest.raises(ShapeError):
        frechet_distance(a, GaussianFit([0.0], [[1.0]]))


@pytest.mark.parametrize("order", ["ab", "ba"])
def test_frechet_rejects_indefinite_covariance_on_either_side(order):
    good = GaussianFit([0.0, 0.0], np.eye(2))
    bad = GaussianFit([0.0, 0.0], np.diag([1.0, -1.0]))
    pair = (good, bad) if order == "ab" else (bad, good)
    with pytest.raises(NumericalError):
        frechet_distance(*pair)
    with pytest.raises(NumericalError):
        frechet_distance(bad, bad)


def test_frechet_is_symmetric_on_correlated_covariances():
    a = GaussianFit([0.5, -1.0, 0.0], [[2.0, 0.6, 0.0], [0.6, 1.0, 0.3], [0.0, 0.3, 0.5]])
    b = GaussianFit([0.0, 0.0, 1.0], [[1.0, -0.2, 0.1], [-0.2, 3.0, 0.0], [0.1, 0.0, 0.2]])
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)


def test_fit_matches_numpy():
    f = sample_normal(Rng(2), (50, 4))
    fit = fit_gaussian(f)
    assert np.allclose(fit.mean, f.mean(axis=0))
    assert np.allclose(fit.covariance, np.cov(f, rowvar=False))
    with pytest.raises(ShapeError):
        fit_gaussian(np.zeros((1, 3)))


def test_gaussian_fit_validation():
    with pytest.raises(ShapeError):
        GaussianFit([0.0, 0.0], [[1.0]])
    with pytest.raises(ShapeError):
        GaussianFit([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_softmax_cross_entropy_gradient():
    logits = sample_normal(Rng(3), (4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = softmax_cross_entropy(logits, labels)
    num = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert max_relative_error(grad.reshape(-1), num) < 1e-7


def test_identity_feature_distance_of_equal_sets_is_zero():
    x = sample_normal(Rng(4), (30, 3, 1, 1))
    fn, clf = build_feature_fn("identity")
    assert clf is None
    assert frechet_feature_distance(x, x.copy(), fn) == 0.0


def test_classifier_features_separate_a_mixture():
    ds = synth_gaussian_mixture(Rng(5), 2048, 4, 8, std=0.3)
    fn, clf = build_feature_fn("classifier", ds, epochs=10, seed=0)
    assert fn(ds.images[:10]).shape == (10, 64)
    assert clf.accuracy(ds.images, ds.labels) > 0.8
    with pytest.raises(ShapeError):
        build_feature_fn("classifier", Dataset(ds.images))


def test_generation_through_an_identity_network():
    net = identity_net(6)
    prior = PriorSpec(6, [1, 4], family=PriorFamily.UNIFORM)
    x = generate_samples(net, prior, Rng(6), 300).reshape(300, 6)
    assert not x[:, [0, 2, 3, 5]].any()
    assert np.abs(x).max() <= 2.0

    cp = ClassPrior(np.array([[5.0] * 6, [-5.0] * 6]), np.full((2, 6), 1e-3), dtype="f64")
    xs = generate_class_samples(net, cp, 1, Rng(7), 20)
    assert np.allclose(xs, -5.0, atol=0.01)


@pytest.mark.parametrize("mode", ["full", InterpolationMode.RESTRICTED])
def test_interpolation_endpoints(mode):
    net = identity_net(4)
    prior = PriorSpec(4, [0, 1, 2, 3], clip_bound=10.0)
    a, b = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1), np.zeros((4, 1, 1))
    path = interpolate(net, prior, a, b, 5, mode)
    assert path.shape == (5, 4, 1, 1)
    assert np.allclose(path[0], a) and np.allclose(path[-1], b)
    assert np.allclose(path[2], a / 2)


def test_restricted_interpolation_clips_first():
    net = identity_net(2)
    prior = PriorSpec(2, [0], clip_bound=1.0)
    a, b = np.array([3.0, 5.0]).reshape(2, 1, 1), np.array([-3.0, 5.0]).reshape(2, 1, 1)
    path = interpolate(net, prior, a, b, 3, "restricted").reshape(3, 2)
    assert path.tolist() == [[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]]
    with pytest.raises(ShapeError):
        interpolate(net, prior, a, b, 1)


def test_traversals():
    net = identity_net(4)
    prior = PriorSpec(4, [0, 2])
    sweep = traverse_dimension(net, prior, 2, range_stds=2.0, steps=5).reshape(5, 4)
    assert sweep[:, 2].tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert not sweep[:, [0, 1, 3]].any()
    with pytest.raises(ShapeError):
        traverse_dimension(net, prior, 1)

    cp = ClassPrior(np.arange(8.0).reshape(2, 4), np.full((2, 4), 0.5), dtype="f64")
    sweep = traverse_class_dimension(net, cp, 1, 3, range_stds=1.0, steps=3).reshape(3, 4)
    assert np.allclose(sweep[:, 3], [6.5, 7.0, 7.5])
    assert np.allclose(sweep[:, :3], [[4.0, 5.0, 6.0]] * 3)


def test_effective_dims():
    assert count_effective(np.array([[2.0, 0.03, 0.01]]), 0.01).tolist() == [2]
    assert count_effective(np.zeros((2, 4)), 0.01).tolist() == [0, 0]
    assert count_effective(np.array([[0.0, 0.0], [0.0, 3.0]]), 0.5).tolist() == [0, 1]
    cp = ClassPrior(np.zeros((2, 3)), np.array([[1.0, 0.0, 0.5], [1.0, 1.0, 1.0]]), dtype="f64")
    assert effective_dims(cp) == [2, 3]


def test_reconstructions(tiny_net):
    x = sample_normal(Rng(8), (3, 1, 4, 4))
    prior = PriorSpec(tiny_net.latent_dim, [0, 1], clip_bound=0.5)
    orig, restricted, full = reconstruct(tiny_net, prior, x)
    assert orig is x
    assert np.abs(full - x).max() < 1e-10
    assert np.abs(restricted - x).max() > 1e-3
    assert roundtrip_l1(tiny_net, x) < 1e-10
