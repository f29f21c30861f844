"""PNG image grids.

Decoded images have no designed value range, so each grid is min-max
normalized as a whole and the range is written next to the PNG in
``<name>.range.txt``.
"""

import logging

import matplotlib.image
import numpy as np

from .exceptions import ShapeError

_logger = logging.getLogger(__name__)


def _as_displayable(images):
    if images.ndim != 4:
        raise ShapeError(f"image grids need N x C x H x W arrays, got {images.shape}")
    n, c, h, w = images.shape
    if c in (1, 3):
        return images
    # vector data: one column of C*H*W values per example
    return images.reshape(n, 1, c * h, w)


def make_grid(images, ncol=None, border=1):
    """Tiles images into one array, min-max normalized to [0, 1].

    Args:
        images (numpy.ndarray): ``N x C x H x W`` with C of 1 or 3 (other
            channel counts are shown as one column per example).
        ncol (int, optional): Images per row; defaults to all in one row.
        border (int, optional): Zero pixels between tiles.

    Returns:
        tuple: ``(grid, lo, hi)``; grid is ``H' x W'`` (gray) or ``H' x W' x 3``.

    Examples:
        >>> grid, lo, hi = make_grid(np.array([[[[1.0]]], [[[3.0]]]]), border=0)
        >>> grid.tolist(), lo, hi
        ([[0.0, 1.0]], 1.0, 3.0)
    """

    images = _as_displayable(np.asarray(images, dtype=np.float64))
    n, c, h, w = images.shape
    ncol = ncol or n
    nrow = -(-n // ncol)
    lo, hi = float(images.min()), float(images.max())
    scaled = (images - lo) / (hi - lo) if hi > lo else np.zeros_like(images)
    grid = np.zeros((c, nrow * (h + border) - border, ncol * (w + border) - border))
    for i in range(n):
        r, q = divmod(i, ncol)
        grid[:, r * (h + border) : r * (h + border) + h, q * (w + border) : q * (w + border) + w] = scaled[i]
    grid = grid[0] if c == 1 else grid.transpose(1, 2, 0)
    return grid, lo, hi


def save_grid(path, images, ncol=None):
    """Writes images as an 8-bit PNG grid plus the normalization range sidecar.

    Args:
        path (str): Output PNG path.
        images (numpy.ndarray): ``N x C x H x W`` raw images.
        ncol (int, optional): Images per row.

    Returns:
        tuple: ``(lo, hi)``, the raw values mapped to 0 and 255.
    """

    grid, lo, hi = make_grid(images, ncol)
    pixels = np.rint(grid * 255).astype(np.uint8)
    if pixels.ndim == 2:
        matplotlib.image.imsave(path, pixels, cmap="gray", vmin=0, vmax=255, format="png")
    else:
        matplotlib.image.imsave(path, pixels, format="png")
    with open(f"{path}.range.txt", "w", encoding="UTF-8") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\n")
    _logger.info("Wrote %d images to %s (range %.4g..%.4g)", len(images), path, lo, hi)
    return lo, hi
