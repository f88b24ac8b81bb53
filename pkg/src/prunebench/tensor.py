"""Dense N x C x H x W float32 tensors.

Tensors are plain ``numpy.ndarray`` objects with four positive dimensions and
dtype float32. The helpers here validate that contract and provide the few
operations other modules rely on, plus the binary dump format used by the CLI.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

DTYPE = np.float32
_HEADER = struct.Struct("<4I")
_MAX_ELEMENTS = 2**31 - 1


class TensorError(ValueError):
    pass


class SizeError(TensorError):
    pass


class BoundsError(TensorError, IndexError):
    pass


def _check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise SizeError(f"expected 4 dimensions, got {len(shape)}")
    if any(s < 1 for s in shape):
        raise SizeError(f"all dimensions must be >= 1, got {shape}")
    total = 1
    for s in shape:
        total *= s
    if total > _MAX_ELEMENTS:
        raise SizeError(f"tensor of shape {shape} has {total} elements, limit is {_MAX_ELEMENTS}")
    return shape  # type: ignore[return-value]


def new(shape, fill: float = 0.0) -> np.ndarray:
    """Return a C-contiguous float32 tensor of ``shape`` filled with ``fill``."""
    return np.full(_check_shape(shape), fill, dtype=DTYPE)


def as_tensor(data) -> np.ndarray:
    """Coerce ``data`` to a validated float32 NCHW array (copying only if needed)."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    _check_shape(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise TensorError("tensor contains non-finite values")
    return arr


def slice_channel(t: np.ndarray, i: int) -> np.ndarray:
    """Channel ``i`` of every batch item, shape (n, 1, h, w)."""
    c = t.shape[1]
    if not 0 <= i < c:
        raise BoundsError(f"channel index {i} out of range for {c} channels")
    return np.ascontiguousarray(t[:, i : i + 1])


def concat_channels(parts) -> np.ndarray:
    return np.ascontiguousarray(np.concatenate(list(parts), axis=1), dtype=DTYPE)


def frobenius_norm_sq(t) -> float:
    """Sum of squares of every element, accumulated in float64."""
    flat = np.asarray(t, dtype=np.float64).ravel()
    return float(np.dot(flat, flat))


def dumps(t: np.ndarray) -> bytes:
    t = as_tensor(t)
    return _HEADER.pack(*t.shape) + t.astype("<f4", copy=False).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TensorError(f"tensor dump truncated at byte {len(buf)}: header needs {_HEADER.size}")
    shape = _check_shape(_HEADER.unpack_from(buf))
    need = _HEADER.size + 4 * int(np.prod(shape))
    if len(buf) != need:
        raise TensorError(f"tensor dump is {len(buf)} bytes, expected {need} for shape {shape}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(shape)
    return np.ascontiguousarray(data, dtype=DTYPE)


def save(t: np.ndarray, path) -> None:
    Path(path).write_bytes(dumps(t))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
