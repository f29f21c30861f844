"""Digests that identify configurations and parameter states.

A run directory, its checkpoints and its metrics are tied together by the
digest of the canonical configuration text. Array digests name the parameter
state a checkpoint holds, in the training log.
"""

import base64
import hashlib

import numpy as np

_enc = "ascii"
DEFAULT_DIGEST_SIZE = 24


class Digest(bytes):
    """A sliceable binary digest with printable encodings.

    "Stringified" Digest objects use URL-safe base64 encodings.

    >>> d = text_digest("")
    >>> str(d)
    'z4PhNX7vuL3xVChQ1m2AB9Yg5AULVxXc'
    """

    def __str__(self):
        return self.as_base64url()

    def __getitem__(self, key):
        return Digest(bytes.__getitem__(self, key))

    def as_base64url(self):
        """Returns Digest as URL-safe, base64-encoded string."""
        return base64.urlsafe_b64encode(self).decode(_enc)


def text_digest(text, digest_size=DEFAULT_DIGEST_SIZE):
    """Returns the truncated SHA-512 digest of a text.

    Args:
        text (str): Text to digest, encoded as UTF-8.
        digest_size (int, optional): Number of bytes kept; a multiple of 3 so the
            base64url form carries no padding. Defaults to 24.

    Returns:
        Digest: The truncated digest.

    Raises:
        ValueError: If digest_size is not a multiple of 3 or exceeds 63.

    Examples:
        >>> len(str(text_digest("[training]\\nregime = ot\\n")))
        32

        >>> text_digest("", 17)
        Traceback (most recent call last):
        ...
        ValueError: digest_size must be a multiple of 3
    """

    if digest_size % 3 != 0:
        raise ValueError("digest_size must be a multiple of 3")
    if not 0 <= digest_size <= 63:
        raise ValueError("digest_size must be between 0 and 63 (bytes)")
    return Digest(hashlib.sha512(text.encode("UTF-8")).digest())[:digest_size]


def array_digest(arrays, digest_size=DEFAULT_DIGEST_SIZE):
    """Returns a digest over named arrays: names, dtypes, shapes and raw bytes.

    Names are visited in sorted order, so the digest does not depend on the
    insertion order of the mapping.

    Args:
        arrays (Mapping[str, numpy.ndarray]): Arrays to digest.
        digest_size (int, optional): Number of bytes kept. Defaults to 24.

    Returns:
        Digest: The truncated digest.

    Examples:
        >>> a = array_digest({"w": np.zeros(3)})
        >>> a == array_digest({"w": np.zeros(3)})
        True
        >>> a == array_digest({"w": np.ones(3)})
        False
    """

    h = hashlib.sha512()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode("UTF-8"))
        h.update(a.dtype.str.encode(_enc))
        h.update(repr(a.shape).encode(_enc))
        h.update(a.tobytes())
    return Digest(h.digest())[:digest_size]
