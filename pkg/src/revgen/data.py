"""Datasets: MNIST in IDX format, synthetic Gaussian mixtures, and batching.

Images are ``N x C x H x W`` float arrays. Each dataset records how raw values
were normalized (``pixel = raw / scale`` and ``pad`` zero pixels on each side)
so :func:`to_raw_pixels` can recover the stored bytes exactly.
"""

import gzip
import logging
import struct

import attr
import numpy as np

from .exceptions import DataError
from .tensor import as_dtype, ensure_finite, sample_normal

_logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@attr.s(frozen=True, eq=False)
class Dataset:
    """Images with optional integer labels and the normalization applied to them."""

    images = attr.ib()
    labels = attr.ib(default=None)
    num_classes = attr.ib(default=0, converter=int)
    scale = attr.ib(default=1.0, converter=float)
    pad = attr.ib(default=0, converter=int)
    name = attr.ib(default="")

    def __attrs_post_init__(self):
        ensure_finite(self.images, f"dataset {self.name} images")
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, index):
        labels = None if self.labels is None else self.labels[index]
        return attr.evolve(self, images=self.images[index], labels=labels)


############################################################################
# IDX files


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if blob[:2] == b"\x1f\x8b":
        try:
            blob = gzip.decompress(blob)
        except (OSError, EOFError) as e:
            raise DataError(f"{path}: corrupt gzip stream: {e}") from e
    return blob


def parse_idx(blob, magic, what="idx"):
    """Parses an unsigned-byte IDX payload.

    Args:
        blob (bytes): File contents.
        magic (int): Expected big-endian magic number.
        what (str, optional): Name used in error messages.

    Returns:
        numpy.ndarray: uint8 array with the dims recorded in the header.

    Raises:
        DataError: On a bad magic number or a truncated payload.

    Examples:
        >>> parse_idx(bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 3]), IDX_LABELS_MAGIC).tolist()
        [7, 3]
    """

    if len(blob) < 4:
        raise DataError(f"{what}: file too short for an IDX header")
    (got,) = struct.unpack(">I", blob[:4])
    if got != magic:
        raise DataError(f"{what}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise DataError(f"{what}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - header < count:
        raise DataError(f"{what}: truncated payload, expected {count} bytes, found {len(blob) - header}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path=None, limit=0, pad_to=32, dtype="f32"):
    """Loads MNIST-style IDX files, plain or gzip-compressed.

    Pixels are scaled to [0, 1] and zero-padded to ``pad_to x pad_to``.

    Args:
        images_path (str): IDX3 image file.
        labels_path (str, optional): IDX1 label file.
        limit (int, optional): Keep only the first ``limit`` examples; 0 keeps all.
        pad_to (int, optional): Output spatial extent. Defaults to 32.
        dtype (str, optional): Image dtype. Defaults to ``"f32"``.

    Returns:
        Dataset: Images ``N x 1 x pad_to x pad_to`` with labels when given.

    Raises:
        DataError: On bad magic numbers, truncation or an image/label count mismatch.
    """

    raw = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = None
    if labels_path:
        labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path).astype(np.int64)
        if len(labels) != len(raw):
            raise DataError(f"{images_path} holds {len(raw)} images but {labels_path} holds {len(labels)} labels")
    if limit:
        raw = raw[:limit]
        labels = None if labels is None else labels[:limit]
    n, h, w = raw.shape
    if pad_to < max(h, w) or (pad_to - h) % 2 or (pad_to - w) % 2:
        raise DataError(f"cannot pad {h}x{w} images symmetrically to {pad_to}x{pad_to}")
    pad = (pad_to - h) // 2
    images = np.zeros((n, 1, pad_to, pad_to), dtype=as_dtype(dtype))
    images[:, 0, pad : pad + h, pad : pad + w] = raw / as_dtype(dtype).type(255.0)
    num_classes = 0 if labels is None or not len(labels) else int(labels.max()) + 1
    _logger.info("Loaded %d images of %dx%d from %s", n, h, w, images_path)
    return Dataset(images, labels, num_classes=num_classes, scale=255.0, pad=pad, name="mnist")


def to_raw_pixels(dataset):
    """Recovers the stored uint8 pixels of an IDX-loaded dataset."""
    p = dataset.pad
    h, w = dataset.images.shape[2:]
    core = dataset.images[:, 0, p : h - p, p : w - p].astype(np.float64)
    return np.rint(core * dataset.scale).astype(np.uint8)


############################################################################
# Synthetic data


def mixture_centers(classes, d, radius=5.0):
    """Class centers evenly spaced on a circle in the first two dims.

    Examples:
        >>> mixture_centers(4, 3, radius=2.0).round(6).tolist()
        [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [-0.0, -2.0, 0.0]]
    """

    centers = np.zeros((classes, d))
    if classes > 1:
        angles = 2 * np.pi * np.arange(classes) / classes
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    return centers


def synth_gaussian_mixture(rng, n, classes, d, radius=5.0, std=0.5, dtype="f32"):
    """Labeled draws from isotropic Gaussians centered on a circle.

    Examples are stored as ``n x d x 1 x 1`` tensors so they pass through
    networks with pointwise blocks. Class counts are balanced (they differ by
    at most one) and the order is shuffled.

    Returns:
        Dataset: The draws with labels.
    """

    labels = rng.generator.permutation(np.arange(n) % classes).astype(np.int64)
    centers = mixture_centers(classes, d, radius)
    noise = sample_normal(rng, (n, d), 0.0, std, dtype="f64")
    x = (centers[labels] + noise).astype(as_dtype(dtype))
    return Dataset(x.reshape(n, d, 1, 1), labels, num_classes=classes, name="mixture")


############################################################################
# Batching


def batch_iterator(dataset, batch, rng, stratified=False):
    """Yields index arrays for one epoch.

    Args:
        dataset (Dataset): Dataset to cover.
        batch (int): Batch size.
        rng (Rng): Shuffling stream.
        stratified (bool, optional): Give every class present the same count
            ``batch // num_classes`` per batch; the epoch ends when the
            smallest class runs out.

    Yields:
        numpy.ndarray: Example indices of one batch.

    Raises:
        DataError: If stratified batches are requested for an unlabeled dataset.

    Examples:
        >>> from revgen.tensor import Rng
        >>> ds = Dataset(np.zeros((5, 1, 1, 1)))
        >>> sorted(int(i) for b in batch_iterator(ds, 2, Rng(0)) for i in b)
        [0, 1, 2, 3, 4]
    """

    n = len(dataset)
    if batch < 1:
        raise DataError(f"batch size must be positive, got {batch}")
    if not stratified:
        order = rng.generator.permutation(n)
        for i in range(0, n, batch):
            yield order[i : i + batch]
        return
    if dataset.labels is None:
        raise DataError("stratified batches need a labeled dataset")
    pools = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    pools = [rng.generator.permutation(p) for p in pools if len(p)]
    per_class = max(1, min(batch // len(pools), min(len(p) for p in pools)))
    n_batches = min(len(p) for p in pools) // per_class
    for b in range(n_batches):
        yield np.concatenate([p[b * per_class : (b + 1) * per_class] for p in pools])
