import tracemalloc

import numpy as np
import pytest

from revgen.exceptions import ShapeError
from revgen.gradcheck import max_relative_error, numeric_gradient, pick_indices
from revgen.layers import Conv
from revgen.presets import build_preset
from revgen.revnet import (
    RevBlock,
    Subsample,
    block_forward,
    block_inverse,
    build_architecture,
    net_backward_recompute,
    net_forward,
    net_inverse,
    net_inverse_backward,
    subsample_forward,
    subsample_inverse,
)
from revgen.tensor import Rng, sample_normal


def deep_spec(blocks):
    return {
        "name": "deep",
        "input_shape": [1, 4, 4],
        "stages": [{"kind": "subsample"}, {"kind": "block", "width": 4, "kernel": 3, "count": blocks}],
    }


def unit_block():
    f, g = Conv(1, 1, 1, dtype="f64"), Conv(1, 1, 1, dtype="f64")
    f.weight[...] = 1.0
    g.weight[...] = 1.0
    return RevBlock(f, g)


def test_block_with_zero_branches_is_identity(tiny_spec):
    zero = build_architecture(tiny_spec, dtype="f64")
    x1, x2 = sample_normal(Rng(1), (2, 2, 2, 2)), sample_normal(Rng(2), (2, 2, 2, 2))
    y1, y2 = block_forward(zero.blocks[0], x1, x2)
    assert np.array_equal(y1, x1) and np.array_equal(y2, x2)
    r1, r2 = block_inverse(zero.blocks[0], x1, x2)
    assert np.array_equal(r1, x1) and np.array_equal(r2, x2)


def test_block_hand_evaluation():
    y1, y2 = block_forward(unit_block(), np.ones((1, 1, 1, 1)), np.full((1, 1, 1, 1), 2.0))
    assert (y1.item(), y2.item()) == (3.0, 5.0)


def test_block_round_trips(tiny_net):
    block = tiny_net.blocks[0]
    x1, x2 = sample_normal(Rng(3), (3, 2, 2, 2)), sample_normal(Rng(4), (3, 2, 2, 2))
    r1, r2 = block_inverse(block, *block_forward(block, x1, x2))
    assert max(np.abs(r1 - x1).max(), np.abs(r2 - x2).max()) < 1e-10
    f1, f2 = block_forward(block, *block_inverse(block, x1, x2))
    assert max(np.abs(f1 - x1).max(), np.abs(f2 - x2).max()) < 1e-10


def test_block_halves_must_match(tiny_net):
    with pytest.raises(ShapeError):
        block_forward(tiny_net.blocks[0], np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 1, 1)))


def test_subsample_twice_on_4x4():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    y = subsample_forward(subsample_forward(x))
    assert y.shape == (1, 16, 1, 1)
    assert sorted(y.reshape(-1).tolist()) == x.reshape(-1).tolist()


def test_first_stream_is_a_covering_checkerboard():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    src = subsample_forward(subsample_forward(x))[0, :8, 0, 0].astype(int)
    rows, cols = src // 4, src % 4
    assert set(rows) == set(cols) == {0, 1, 2, 3}
    assert np.all((rows + cols) % 2 == 0)


@pytest.mark.parametrize("shape", [(2, 1, 4, 4), (2, 3, 8, 4), (1, 4, 2, 2)])
def test_subsample_inverse_is_exact(shape):
    x = sample_normal(Rng(5), shape)
    assert np.array_equal(subsample_inverse(subsample_forward(x)), x)
    y = sample_normal(Rng(6), (shape[0], 4 * shape[1], shape[2] // 2, shape[3] // 2))
    assert np.array_equal(subsample_forward(subsample_inverse(y)), y)


def test_subsample_rejects_odd_extent():
    with pytest.raises(ShapeError):
        subsample_forward(np.zeros((1, 1, 3, 4)))
    with pytest.raises(ShapeError):
        subsample_inverse(np.zeros((1, 3, 2, 2)))


def test_subsample_stage_backward_is_its_inverse():
    s = Subsample()
    dy = sample_normal(Rng(7), (1, 8, 2, 2))
    assert np.array_equal(s.backward(None, dy), subsample_inverse(dy))


def test_zero_weight_net_is_the_subsampling_permutation(tiny_spec):
    net = build_architecture(tiny_spec, dtype="f64")
    x = sample_normal(Rng(8), (2, 1, 4, 4))
    z = net_forward(net, x)
    assert np.array_equal(z, subsample_forward(x))
    assert np.array_equal(net_inverse(net, z), x)


def test_deep_net_round_trip():
    net = build_architecture(deep_spec(6), rng=Rng(9), dtype="f64")
    x = sample_normal(Rng(10), (4, 1, 4, 4))
    assert np.abs(net.inverse(net.forward(x)) - x).max() < 1e-8


def test_f32_round_trip():
    net = build_architecture(deep_spec(4), rng=Rng(11), dtype="f32")
    x = sample_normal(Rng(12), (4, 1, 4, 4), dtype="f32")
    z = net.forward(x)
    assert z.dtype == np.float32
    assert np.abs(net.inverse(z) - x).max() < 1e-4


def test_net_shape_checks(tiny_net):
    with pytest.raises(ShapeError):
        tiny_net.forward(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        tiny_net.inverse(np.zeros((1, 4, 4, 4)))
    assert tiny_net.latent_shape == (4, 2, 2)
    assert tiny_net.latent_dim == 16
    assert tiny_net.dtype == np.float64


def test_encode_decode_are_flat(tiny_net):
    x = sample_normal(Rng(13), (3, 1, 4, 4))
    z = tiny_net.encode(x)
    assert z.shape == (3, 16)
    assert np.abs(tiny_net.decode(z) - x).max() < 1e-10


def test_recompute_matches_cached_backprop():
    net = build_architecture(deep_spec(4), rng=Rng(14), dtype="f64")
    x = sample_normal(Rng(15), (2, 1, 4, 4))
    dz = sample_normal(Rng(16), (2, 4, 2, 2))
    net.zero_grad()
    dx_r = net.backward_recompute(net.forward(x), dz)
    recompute = {k: v.copy() for k, v in net.named_grads().items()}
    net.zero_grad()
    _, inputs = net.forward_cached(x)
    dx_c = net.backward_cached(inputs, dz)
    assert max_relative_error(dx_r, dx_c) < 1e-6
    for name, g in net.named_grads().items():
        assert max_relative_error(recompute[name], g) < 1e-6, name


def _traced_peak(fn):
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        fn()
        return tracemalloc.get_traced_memory()[1] - base
    finally:
        tracemalloc.stop()


def wide_spec(blocks):
    return {
        "name": "wide",
        "input_shape": [1, 32, 32],
        "stages": [{"kind": "subsample"}, {"kind": "block", "width": 4, "kernel": 3, "count": blocks}],
    }


def test_recompute_memory_does_not_grow_with_depth():
    x = sample_normal(Rng(17), (8, 1, 32, 32))
    act_bytes = x.nbytes
    peaks = {}
    for blocks in (4, 16):
        net = build_architecture(wide_spec(blocks), rng=Rng(18), dtype="f64")
        z = net.forward(x)
        dz = np.ones_like(z)
        peaks[blocks] = _traced_peak(lambda: net.backward_recompute(z, dz))
        if blocks == 16:
            cached = _traced_peak(lambda: net.backward_cached(net.forward_cached(x)[1], dz))
    assert peaks[16] < peaks[4] + 2 * act_bytes
    assert cached > peaks[16] + 8 * act_bytes


@pytest.mark.parametrize(
    "name, input_shape",
    [
        ("mnist-small", None),
        ("mixture-small", None),
        pytest.param("celeba", (1, 64, 64), marks=pytest.mark.slow),
    ],
)
def test_recompute_matches_cached_backprop_on_presets(name, input_shape):
    net = build_preset(name, rng=Rng(27), dtype="f64", input_shape=input_shape)
    x = sample_normal(Rng(28), (2,) + net.input_shape)
    dz = sample_normal(Rng(29), (2,) + net.latent_shape)
    net.zero_grad()
    dx_r = net.backward_recompute(net.forward(x), dz)
    recompute = {k: v.copy() for k, v in net.named_grads().items()}
    net.zero_grad()
    _, inputs = net.forward_cached(x)
    dx_c = net.backward_cached(inputs, dz)
    assert max_relative_error(dx_r, dx_c) < 1e-6
    for pname, g in net.named_grads().items():
        assert max_relative_error(recompute[pname], g) < 1e-6, pname


def test_zero_upstream_gradient_gives_zero_parameter_gradients(tiny_net):
    z = tiny_net.forward(sample_normal(Rng(19), (2, 1, 4, 4)))
    tiny_net.zero_grad()
    net_backward_recompute(tiny_net, z, np.zeros_like(z))
    assert not any(g.any() for g in tiny_net.named_grads().values())


def test_parameter_gradient_through_full_net(tiny_net):
    x = sample_normal(Rng(20), (2, 1, 4, 4))
    w = sample_normal(Rng(21), (2, 4, 2, 2))
    tiny_net.zero_grad()
    tiny_net.backward_recompute(tiny_net.forward(x), w)
    p = tiny_net.named_params()["1.F.0.weight"]
    idx = pick_indices(p, 5, Rng(22))
    num = numeric_gradient(lambda: float(np.sum(tiny_net.forward(x) * w)), p, indices=idx)
    assert max_relative_error(tiny_net.named_grads()["1.F.0.weight"].reshape(-1)[idx], num) < 1e-4


def test_inverse_backward_matches_central_differences(tiny_net):
    z = sample_normal(Rng(23), (2, 4, 2, 2))
    c = sample_normal(Rng(24), (2, 1, 4, 4))
    tiny_net.zero_grad()
    x = tiny_net.inverse(z)
    dz = net_inverse_backward(tiny_net, x, c)
    num = numeric_gradient(lambda: float(np.sum(tiny_net.inverse(z) * c)), z)
    assert max_relative_error(dz.reshape(-1), num) < 1e-4
    p = tiny_net.named_params()["2.G.2.weight"]
    idx = pick_indices(p, 5, Rng(25))
    analytic = tiny_net.named_grads()["2.G.2.weight"].reshape(-1)[idx].copy()
    num = numeric_gradient(lambda: float(np.sum(tiny_net.inverse(z) * c)), p, indices=idx)
    assert max_relative_error(analytic, num) < 1e-4


def test_build_architecture_counts_and_errors(tiny_spec):
    net = build_architecture(tiny_spec)
    assert len(net.blocks) == 2 and len(net.stages) == 3
    assert net.num_params() == 2 * 2 * ((4 * 2 * 9 + 4) + (2 * 4 * 9 + 2))
    with pytest.raises(ShapeError):
        build_architecture({"input_shape": [1, 4, 4], "stages": [{"kind": "block", "width": 2, "kernel": 1}]})
    with pytest.raises(ShapeError):
        build_architecture({"input_shape": [1, 2, 2], "stages": [{"kind": "subsample"}, {"kind": "subsample"}]})
    with pytest.raises(ShapeError):
        build_architecture({"input_shape": [2, 2, 2], "stages": [{"kind": "shuffle"}]})


def test_build_architecture_is_deterministic(tiny_spec):
    a = build_architecture(tiny_spec, rng=Rng(26), dtype="f64")
    b = build_architecture(tiny_spec, rng=Rng(26), dtype="f64")
    for (na, pa), (nb, pb) in zip(a.named_params().items(), b.named_params().items()):
        assert na == nb and np.array_equal(pa, pb)
