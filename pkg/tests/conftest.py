import copy
import gzip
import os
import struct

import numpy as np
import pytest

from revgen.data import synth_gaussian_mixture
from revgen.revnet import build_architecture
from revgen.tensor import Rng

TINY_SPEC = {
    "name": "tiny",
    "input_shape": [1, 4, 4],
    "stages": [{"kind": "subsample"}, {"kind": "block", "width": 4, "kernel": 3, "count": 2}],
}

test_dir = os.path.dirname(__file__)


def _write_idx(path, array, magic, compress=False):
    """Writes a uint8 array as an IDX file (optionally gzip-compressed)."""
    a = np.asarray(array, dtype=np.uint8)
    blob = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()
    with open(path, "wb") as fh:
        fh.write(gzip.compress(blob) if compress else blob)
    return str(path)


@pytest.fixture
def write_idx():
    return _write_idx


@pytest.fixture
def tiny_spec():
    return copy.deepcopy(TINY_SPEC)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_net():
    """1x4x4 -> 4x2x2 network in f64 with two blocks."""
    return build_architecture(TINY_SPEC, rng=Rng(0, "net"), dtype="f64")


@pytest.fixture
def mixture():
    return synth_gaussian_mixture(Rng(0, "mixture"), 64, 4, 8, dtype="f64")


@pytest.fixture
def idx_files(tmp_path):
    """Twenty 28x28 digit-like images with labels 0..9, twice over."""
    images = (np.arange(20 * 28 * 28) % 251).reshape(20, 28, 28)
    labels = np.arange(20) % 10
    return (
        _write_idx(tmp_path / "images-idx3-ubyte", images, 0x00000803),
        _write_idx(tmp_path / "labels-idx1-ubyte", labels, 0x00000801),
    )
