"""CIF1 binary field dumps.

Layout (little endian): magic ``b"CIF1"``, ``u32`` dimension ``d``, ``d``
``u32`` axis lengths, ``u32`` component count, then the components as
row-major ``f64`` blocks.
"""

import struct

import numpy as np

MAGIC = b"CIF1"


class CorruptArtifact(ValueError):
    pass


def write_cif(path, values, dim):
    """Write an array whose trailing ``dim`` axes are spatial."""
    values = np.ascontiguousarray(values, dtype="<f8")
    shape = values.shape[values.ndim - dim:]
    ncomp = int(np.prod(values.shape[: values.ndim - dim], dtype=np.int64))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack(f"<{dim}I", *shape))
        fh.write(struct.pack("<I", ncomp))
        fh.write(values.tobytes(order="C"))


def read_cif(path):
    """Return ``(components, spatial_shape)``; components has a leading axis."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CorruptArtifact(f"{path}: bad magic")
    try:
        (dim,) = struct.unpack_from("<I", blob, 4)
        shape = struct.unpack_from(f"<{dim}I", blob, 8)
        (ncomp,) = struct.unpack_from("<I", blob, 8 + 4 * dim)
    except struct.error as exc:
        raise CorruptArtifact(f"{path}: truncated header") from exc
    offset = 12 + 4 * dim
    count = ncomp * int(np.prod(shape, dtype=np.int64))
    if len(blob) - offset != 8 * count:
        raise CorruptArtifact(f"{path}: payload has {len(blob) - offset} bytes, expected {8 * count}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape((ncomp,) + tuple(shape)).astype(np.float64), tuple(shape)
