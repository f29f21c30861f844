"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"RGCK"  u32 version  u32 crc32(payload)  payload

The payload is a sequence of records::

    u32 name_len  name (UTF-8)  u8 dtype_len  dtype  u32 ndim  u64 shape[ndim]  u64 nbytes  data

Records keep insertion order, so writing what was read reproduces the file
byte for byte. A file is read completely and checksummed before any array is
returned.
"""

import logging
import os
import struct
import zlib

import numpy as np

from .exceptions import CheckpointError

_logger = logging.getLogger(__name__)

MAGIC = b"RGCK"
FORMAT_VERSION = 1

_DTYPES = {"f32": "<f4", "f64": "<f8", "u64": "<u8", "i64": "<i8", "u8": "u1"}
_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


def encode_arrays(arrays):
    """Serializes named arrays to checkpoint bytes.

    Examples:
        >>> blob = encode_arrays({"w": np.arange(3.0)})
        >>> blob[:4], len(blob)
        (b'RGCK', 65)
        >>> decode_arrays(blob)["w"].tolist()
        [0.0, 1.0, 2.0]
    """

    parts = []
    for name, value in arrays.items():
        a = np.asarray(value)
        dt = _NAMES.get(a.dtype.newbyteorder("<"))
        if dt is None:
            raise CheckpointError(f"{name}: unsupported dtype {a.dtype}")
        data = np.ascontiguousarray(a, dtype=_DTYPES[dt]).tobytes()
        bname = name.encode("UTF-8")
        parts.append(struct.pack("<I", len(bname)) + bname)
        parts.append(struct.pack("<B", len(dt)) + dt.encode("ascii"))
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(struct.pack("<Q", len(data)) + data)
    payload = b"".join(parts)
    return MAGIC + struct.pack("<II", FORMAT_VERSION, zlib.crc32(payload)) + payload


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated record at byte {self.pos + 12}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_arrays(blob):
    """Parses checkpoint bytes into an ordered ``{name: array}`` dict.

    Raises:
        CheckpointError: On bad magic, unknown version, checksum mismatch or truncation.
    """

    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, crc = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    payload = blob[12:]
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint checksum mismatch (file is corrupt or truncated)")
    r = _Reader(payload)
    arrays = {}
    while r.pos < len(payload):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("UTF-8")
        (dt_len,) = r.unpack("<B")
        dt = r.take(dt_len).decode("ascii")
        if dt not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype {dt!r}")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        a = np.frombuffer(r.take(nbytes), dtype=_DTYPES[dt])
        if a.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{name}: {a.size} elements do not fill shape {shape}")
        arrays[name] = a.reshape(shape).astype(a.dtype.newbyteorder("="))
    return arrays


def write_arrays(path, arrays):
    """Writes a checkpoint atomically (temporary file, then rename)."""
    blob = encode_arrays(arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    _logger.info("Wrote checkpoint %s (%d arrays, %d bytes)", path, len(arrays), len(blob))


def read_arrays(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_arrays(blob)


def text_to_array(text):
    return np.frombuffer(text.encode("UTF-8"), dtype=np.uint8).copy()


def array_to_text(a):
    return np.asarray(a, dtype=np.uint8).tobytes().decode("UTF-8")


def take_prefixed(arrays, prefix):
    """Entries of arrays whose names start with prefix, prefix removed."""
    return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
