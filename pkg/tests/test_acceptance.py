"""Desk-scale end-to-end checks, deselected by default; run with ``pytest -m slow``.

The MNIST runs need REVGEN_MNIST_DIR pointing at a directory holding
``train-images-idx3-ubyte`` and ``train-labels-idx1-ubyte`` (optionally
gzipped); they are skipped without it.
"""

import itertools
import os

import numpy as np
import pytest

from revgen.config import parse_config
from revgen.data import load_mnist_idx
from revgen.evaluation import FeatureClassifier, effective_dims, generate_class_samples, roundtrip_l1
from revgen.ot import solve_exact
from revgen.presets import build_preset
from revgen.tensor import Rng, sample_normal
from revgen.training import RunDir, train_adversarial, train_ot

MNIST_DIR = os.environ.get("REVGEN_MNIST_DIR")
HELD_OUT = 2000

pytestmark = pytest.mark.slow
needs_mnist = pytest.mark.skipif(not MNIST_DIR, reason="REVGEN_MNIST_DIR is not set")


def _find(stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(MNIST_DIR, name)
        if os.path.exists(path):
            return path
    pytest.skip(f"{stem} not found in {MNIST_DIR}")


@pytest.fixture(scope="module")
def mnist():
    return load_mnist_idx(_find("train-images-idx3-ubyte"), _find("train-labels-idx1-ubyte"))


@pytest.fixture(scope="module")
def mnist_train(mnist):
    return mnist.subset(slice(0, len(mnist) - HELD_OUT))


@pytest.fixture(scope="module")
def mnist_held_out(mnist):
    return mnist.subset(slice(len(mnist) - HELD_OUT, None))


def test_exact_plans_on_random_cost_matrices():
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 9)}
    for i in range(200):
        r = Rng(i, "cost-matrix")
        n = int(r.generator.integers(1, 9))
        c = r.generator.random((n, n))
        best = c[np.arange(n), perms[n]].mean(axis=1).min()
        assert solve_exact(c).cost == pytest.approx(best, abs=1e-12), i


@pytest.mark.parametrize("name", ["mnist-small", "mixture-small"])
def test_random_weight_presets_invert_in_f64(name):
    net = build_preset(name, rng=Rng(1, "net"), dtype="f64")
    x = sample_normal(Rng(2), (4,) + net.input_shape)
    assert np.abs(net.inverse(net.forward(x)) - x).max() <= 1e-8


@pytest.fixture(scope="module")
def recon_run(mnist_train, tmp_path_factory):
    cfg = parse_config(
        "",
        [
            "training.batch_size=128",
            "training.recon_epochs=5",
            "training.adv_epochs=0",
            "training.checkpoint_every=0",
            "eval.every=0",
        ],
    )
    out = tmp_path_factory.mktemp("recon")
    state = train_adversarial(cfg, mnist_train.subset(slice(0, 8192)), str(out))
    return state, RunDir(out).read_metrics()


@needs_mnist
def test_reconstruction_phase_keeps_decreasing(recon_run):
    _, rows = recon_run
    recon = [float(r["recon_l1"]) for r in rows]
    assert len(recon) == 5
    assert all(b < a for a, b in zip(recon, recon[1:])), recon


@needs_mnist
def test_trained_network_round_trips_in_f32(recon_run, mnist_held_out):
    state, _ = recon_run
    assert roundtrip_l1(state.net, mnist_held_out.images[:256]) <= 1e-5


@needs_mnist
def test_ot_desk_run(mnist_train, mnist_held_out, tmp_path):
    cfg = parse_config(
        "",
        [
            "training.regime=ot",
            "training.batch_size=1280",
            "training.ot_epochs=20",
            "training.checkpoint_every=0",
            "eval.every=0",
        ],
    )
    state = train_ot(cfg, mnist_train, str(tmp_path))

    ot = [float(r["ot"]) for r in RunDir(tmp_path).read_metrics()]
    assert len(ot) == 20
    assert np.mean(ot[-3:]) <= 0.5 * ot[0], ot

    assert max(effective_dims(state.class_prior, 0.01)) <= 8

    clf = FeatureClassifier(int(np.prod(mnist_held_out.shape)), 10, Rng(5, "held-out"))
    clf.train(mnist_held_out, 5, Rng(6, "held-out"))
    rng = Rng(7, "class-samples")
    hits = [clf.predict(generate_class_samples(state.net, state.class_prior, c, rng, 100)) == c for c in range(10)]
    assert np.mean(hits) >= 0.7


@needs_mnist
def test_adversarial_runs_agree_across_seeds(mnist_train, tmp_path):
    finals = []
    for seed in range(4):
        cfg = parse_config(
            "",
            [
                "training.batch_size=128",
                "training.recon_epochs=2",
                "training.adv_epochs=3",
                f"training.seed_data={seed}",
                f"training.seed_adversary={seed}",
                "training.checkpoint_every=0",
                "eval.every=5",
            ],
        )
        out = tmp_path / f"seed-{seed}"
        train_adversarial(cfg, mnist_train.subset(slice(0, 8192)), str(out))
        finals.append(float(RunDir(out).read_metrics()[-1]["frechet"]))
    assert all(np.isfinite(finals))
    assert (max(finals) - min(finals)) / np.mean(finals) <= 0.2, finals
