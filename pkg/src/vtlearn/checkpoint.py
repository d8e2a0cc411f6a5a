"""Flat binary container for named float64 tensors ("VTL1" format).

Layout, all integers 64-bit little-endian unsigned:

    magic "VTL1" | count | repeated per tensor:
        name_len | name bytes (UTF-8) | rank | dims... | float64 values

Values are IEEE-754 binary64, little-endian, C order.  Round-trips are
bit-exact.  The same container stores parameter checkpoints and
preprocessed sample records.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VTL1"


class CheckpointError(Exception):
    pass


def save_tensors(path, tensors: dict):
    """Write an ordered {name: array} mapping; arrays coerce to float64."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<Q", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<Q", d))
            f.write(a.tobytes(order="C"))


def load_tensors(path) -> dict:
    """Read a container back into an ordered {name: float64 array} dict."""
    out = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a VTL1 container")
        (count,) = struct.unpack("<Q", _need(f, 8, path))
        for _ in range(count):
            (nlen,) = struct.unpack("<Q", _need(f, 8, path))
            name = _need(f, nlen, path).decode("utf-8")
            (rank,) = struct.unpack("<Q", _need(f, 8, path))
            dims = struct.unpack(f"<{rank}Q", _need(f, 8 * rank, path)) if rank else ()
            n = 1
            for d in dims:
                n *= d
            raw = _need(f, 8 * n, path)
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return out


def _need(f, n, path):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"{path}: truncated container")
    return b
