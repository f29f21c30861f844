"""Built-in invariant suite run by ``revgen selftest``.

Checks register themselves with :func:`check`; each raises on failure. All of
them run in f64 on small, freshly built models and finish in seconds.
"""

import itertools
import logging
import sys

import numpy as np

from .checkpoint import decode_arrays, encode_arrays
from .discriminator import Discriminator
from .evaluation import GaussianFit, frechet_distance
from .gradcheck import max_relative_error, numeric_gradient, pick_indices
from .latent import PriorSpec
from .losses import hinge_disc_from_scores, hinge_enc_from_scores, recon_loss
from .optim import AdamState, adam_step
from .ot import cost_matrix, ot_loss_and_grad, solve_exact
from .revnet import block_forward, block_inverse, build_architecture, subsample_forward, subsample_inverse
from .tensor import Rng, sample_normal

_logger = logging.getLogger(__name__)

_CHECKS = []


def check(name):
    """Registers the decorated zero-argument function as a selftest check."""

    def register(fn):
        _CHECKS.append((name, fn))
        return fn

    return register


def registered_checks():
    return list(_CHECKS)


def tiny_net(rng, blocks=2, width=4):
    """A 1x4x4 -> 4x2x2 f64 network for quick checks."""
    spec = {
        "name": "tiny",
        "input_shape": [1, 4, 4],
        "stages": [{"kind": "subsample"}, {"kind": "block", "width": width, "kernel": 3, "count": blocks}],
    }
    return build_architecture(spec, rng=rng, dtype="f64")


def _expect(cond, message):
    if not cond:
        raise AssertionError(message)


@check("reversible block round trip")
def _block_round_trip():
    net = tiny_net(Rng(1))
    x1, x2 = (sample_normal(Rng(1, f"x{i}"), (3, 2, 2, 2)) for i in (1, 2))
    y1, y2 = block_forward(net.blocks[0], x1, x2)
    r1, r2 = block_inverse(net.blocks[0], y1, y2)
    err = max(np.abs(r1 - x1).max(), np.abs(r2 - x2).max())
    _expect(err < 1e-10, f"round-trip error {err:.3g}")


@check("subsampling coverage and exact inverse")
def _subsample():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    y = subsample_forward(subsample_forward(x))
    _expect(np.array_equal(subsample_inverse(subsample_inverse(y)), x), "inverse is not exact")
    src = y[0, :8, 0, 0].astype(int)
    rows, cols = set(src // 4), set(src % 4)
    _expect(rows == cols == {0, 1, 2, 3}, f"first stream covers rows {rows} and cols {cols}")


@check("network round trip")
def _net_round_trip():
    net = tiny_net(Rng(2), blocks=6)
    x = sample_normal(Rng(2, "x"), (4, 1, 4, 4))
    err = np.abs(net.inverse(net.forward(x)) - x).max()
    _expect(err < 1e-8, f"round-trip error {err:.3g}")


@check("recompute backprop matches cached backprop")
def _recompute():
    net = tiny_net(Rng(3), blocks=4)
    x = sample_normal(Rng(3, "x"), (2, 1, 4, 4))
    dz = sample_normal(Rng(3, "dz"), (2,) + net.latent_shape)
    net.zero_grad()
    dx_r = net.backward_recompute(net.forward(x), dz)
    g_r = {k: v.copy() for k, v in net.named_grads().items()}
    net.zero_grad()
    _, inputs = net.forward_cached(x)
    dx_c = net.backward_cached(inputs, dz)
    errs = [max_relative_error(g_r[k], v) for k, v in net.named_grads().items()] + [max_relative_error(dx_r, dx_c)]
    _expect(max(errs) < 1e-6, f"max relative difference {max(errs):.3g}")


@check("network parameter gradient")
def _net_gradient():
    net = tiny_net(Rng(4))
    x = sample_normal(Rng(4, "x"), (2, 1, 4, 4))
    w = sample_normal(Rng(4, "w"), (2,) + net.latent_shape)
    net.zero_grad()
    net.backward_recompute(net.forward(x), w)
    for name, p in net.named_params().items():
        idx = pick_indices(p, 3, Rng(4, name))
        num = numeric_gradient(lambda: float(np.sum(net.forward(x) * w)), p, indices=idx)
        err = max_relative_error(net.named_grads()[name].reshape(-1)[idx], num)
        _expect(err < 1e-4, f"{name}: relative error {err:.3g}")


@check("reconstruction loss gradient")
def _recon_gradient():
    net = tiny_net(Rng(5))
    prior = PriorSpec(net.latent_dim, [0, 3, 5, 9], clip_bound=1.0)
    x = sample_normal(Rng(5, "x"), (2, 1, 4, 4))
    net.zero_grad()
    recon_loss(net, prior, x)
    # the decoder path accumulates into the grad buffers on every evaluation
    analytic = {k: v.copy() for k, v in net.named_grads().items()}
    for name in ("1.F.0.weight", "2.G.2.bias"):
        p = net.named_params()[name]
        idx = pick_indices(p, 3, Rng(5, name))
        num = numeric_gradient(lambda: recon_loss(net, prior, x, propagate=False)[0].total, p, indices=idx)
        err = max_relative_error(analytic[name].reshape(-1)[idx], num)
        _expect(err < 1e-4, f"{name}: relative error {err:.3g}")


@check("spectrally normalized discriminator gradient")
def _disc_gradient():
    disc = Discriminator(3, 4, 5, rng=Rng(6), power_warmup=50, dtype="f64")
    z = sample_normal(Rng(6, "z"), (5, 3))
    c = sample_normal(Rng(6, "c"), (5,))
    disc.zero_grad()
    dz = disc.backward(z, c)
    num = numeric_gradient(lambda: float(disc.forward(z) @ c), z)
    _expect(max_relative_error(dz.reshape(-1), num) < 1e-4, "input gradient mismatch")
    for name, p in disc.named_params().items():
        num = numeric_gradient(lambda: float(disc.forward(z) @ c), p)
        err = max_relative_error(disc.named_grads()[name].reshape(-1), num)
        _expect(err < 1e-4, f"{name}: relative error {err:.3g}")


@check("exact transport matches brute force")
def _ot_exact():
    rng = Rng(7).generator
    for n in range(1, 7):
        c = rng.random((n, n))
        best = min(np.mean(c[np.arange(n), list(p)]) for p in itertools.permutations(range(n)))
        cost = solve_exact(c).cost
        _expect(abs(cost - best) <= 1e-12, f"n={n}: cost {cost} vs brute force {best}")


@check("transport gradient with a strict pairing")
def _ot_gradient():
    x = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
    y = x[[2, 0, 3, 1]] + np.array([[0.2, 0.1], [-0.1, 0.3], [0.1, -0.2], [0.3, 0.2]])
    _, dx, dy, _ = ot_loss_and_grad(x, y)
    err = max(
        max_relative_error(dx.reshape(-1), numeric_gradient(lambda: ot_loss_and_grad(x, y)[0], x)),
        max_relative_error(dy.reshape(-1), numeric_gradient(lambda: ot_loss_and_grad(x, y)[0], y)),
    )
    _expect(err < 1e-4, f"relative error {err:.3g}")
    _expect(np.allclose(np.diag(cost_matrix(x, x)), 0), "self-cost diagonal is not zero")


@check("Fréchet distance closed forms")
def _frechet():
    a = GaussianFit(np.zeros(2), np.diag([1.0, 4.0]))
    b = GaussianFit(np.array([1.0, 0.0]), np.diag([9.0, 1.0]))
    _expect(frechet_distance(a, a) == 0.0, "identical fits give a non-zero distance")
    d = frechet_distance(a, b)
    _expect(abs(d - (1.0 + 4.0 + 1.0)) < 1e-9, f"diagonal case gives {d}")


@check("hinge loss arithmetic")
def _hinge():
    _expect(hinge_disc_from_scores(np.ones(3), -np.ones(3))[0] == 0.0, "perfect margin")
    _expect(hinge_disc_from_scores(np.zeros(3), np.zeros(3))[0] == 2.0, "zero scores")
    _expect(hinge_enc_from_scores(np.full(3, 0.25))[0] == -0.25, "encoder loss")


@check("Adam matches a scalar reference")
def _adam():
    g = sample_normal(Rng(8), (100,))
    p = {"w": np.array([0.5])}
    st = AdamState(lr=1e-2, beta1=0.5, beta2=0.9, eps=1e-8)
    w, m, v = 0.5, 0.0, 0.0
    for t, gt in enumerate(g, start=1):
        adam_step(st, p, {"w": np.array([gt])})
        m = 0.5 * m + 0.5 * gt
        v = 0.9 * v + 0.1 * gt * gt
        w -= 1e-2 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-8)
    _expect(abs(p["w"][0] - w) < 1e-12, f"difference {abs(p['w'][0] - w):.3g}")


@check("checkpoint encoding is stable")
def _checkpoint():
    arrays = {"b": np.arange(3, dtype=np.int64), "a": np.ones((2, 2), dtype=np.float32)}
    blob = encode_arrays(arrays)
    _expect(encode_arrays(decode_arrays(blob)) == blob, "re-encoding changed the bytes")


def run_selftest(out=None):
    """Runs every registered check, printing one PASS/FAIL line each and a summary.

    Returns:
        int: The number of failed checks.
    """

    out = out or sys.stdout
    failed = 0
    for name, fn in _CHECKS:
        try:
            fn()
        except Exception as e:  # pylint: disable=broad-except
            failed += 1
            _logger.debug("selftest check %r failed", name, exc_info=True)
            print(f"FAIL {name}: {e}", file=out)
        else:
            print(f"PASS {name}", file=out)
    print(f"{len(_CHECKS) - failed} passed, {failed} failed, {len(_CHECKS)} checks", file=out)
    return failed
