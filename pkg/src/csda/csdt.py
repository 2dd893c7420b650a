"""Read and write the raw CSDT tensor container.

Layout: magic ``CSDT``, version byte ``1``, little-endian uint32 rank, ``rank``
little-endian uint32 extents, then the row-major little-endian float32 payload.
"""

import struct

import numpy as np

MAGIC = b"CSDT"
VERSION = 1


class FormatError(ValueError):
    pass


def encode(array):
    """Serialize an array to CSDT bytes (values are rounded to float32)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + bytes([VERSION]) + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes()


def decode(buf, offset=0):
    """Parse one CSDT record from ``buf`` starting at ``offset``.

    Returns:
        (array as float64, offset just past the record)
    """
    view = memoryview(buf)
    if bytes(view[offset : offset + 4]) != MAGIC:
        raise FormatError(f"bad magic at offset {offset}")
    if len(view) < offset + 9:
        raise FormatError("truncated header")
    version = view[offset + 4]
    if version != VERSION:
        raise FormatError(f"unsupported CSDT version {version}")
    (rank,) = struct.unpack_from("<I", view, offset + 5)
    pos = offset + 9
    if len(view) < pos + 4 * rank:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", view, pos)
    pos += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    end = pos + 4 * count
    if len(view) < end:
        raise FormatError(f"payload truncated: need {end - pos} bytes, have {len(view) - pos}")
    arr = np.frombuffer(view[pos:end], dtype="<f4").reshape(shape)
    return arr.astype(np.float64), end


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes")
    return arr
