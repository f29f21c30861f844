"""Central-difference gradient oracle shared by the tests and ``revgen selftest``."""

import numpy as np


def max_relative_error(analytic, numeric):
    """``max |a - n| / max(1, |n|)`` over all entries.

    Examples:
        >>> max_relative_error(np.array([1.0, 3.0]), np.array([1.0, 2.0]))
        0.5
    """

    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)), initial=0.0))


def pick_indices(x, n, rng):
    """Up to n distinct flat indices into x, drawn from rng."""
    if x.size <= n:
        return np.arange(x.size)
    return np.sort(rng.generator.choice(x.size, size=n, replace=False))


def numeric_gradient(f, x, h=1e-5, indices=None):
    """Central differences of the scalar function f with respect to x.

    x is perturbed in place and restored, so f may read it through any alias
    (for example a layer's parameter array).

    Args:
        f (callable): Zero-argument function returning a float.
        x (numpy.ndarray): Array to perturb.
        h (float, optional): Step. Defaults to 1e-5.
        indices (array of int, optional): Flat indices to evaluate; all by default.

    Returns:
        numpy.ndarray: Derivatives at the requested flat indices.

    Examples:
        >>> x = np.array([1.0, 2.0])
        >>> numeric_gradient(lambda: float(np.sum(x ** 2)), x).round(6).tolist()
        [2.0, 4.0]
    """

    if not x.flags.c_contiguous:
        raise ValueError("numeric_gradient perturbs x in place and needs a C-contiguous array")
    flat = x.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * h)
    return out
