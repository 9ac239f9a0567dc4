"""Dense float64 tensors and the TNSR binary format.

A :class:`Tensor` is an immutable, row-major array of 64-bit floats.  It is a
thin value wrapper around a read-only numpy buffer; everything numeric in the
package accepts either a ``Tensor`` or a plain ndarray.
"""

from __future__ import annotations

import io
import math
import struct
from typing import BinaryIO, Sequence, Union

import numpy as np

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1

ArrayLike = Union["Tensor", np.ndarray, Sequence, float]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DomainError(ValueError):
    """Raised when an operation is evaluated outside its domain."""


class FormatError(ValueError):
    """Raised on malformed TNSR / checkpoint input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.flags.writeable:
        a = a.copy() if a.base is not None else a
        a.flags.writeable = False
    return a


class Tensor:
    """Immutable dense tensor (shape + flat row-major float64 data)."""

    __slots__ = ("_a",)

    def __init__(self, values: ArrayLike, shape: Sequence[int] | None = None):
        a = np.array(values.array if isinstance(values, Tensor) else values,
                     dtype=np.float64, copy=True)
        if a.ndim == 0:
            a = a.reshape(1)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if a.size != math.prod(shape):
                raise ShapeError(f"{a.size} values cannot fill shape {shape}")
            a = a.reshape(shape)
        if any(d < 1 for d in a.shape):
            raise ShapeError(f"extents must be >= 1, got {a.shape}")
        a.flags.writeable = False
        self._a = a

    @classmethod
    def wrap(cls, a: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t._a = _frozen(a)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def rank(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and dtype != np.float64:
            return self._a.astype(dtype)
        return self._a.copy() if copy else self._a

    def __getitem__(self, idx):
        return self._a[idx]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return Tensor.wrap(np.transpose(self._a, axes))

    def to_bytes(self) -> bytes:
        return dumps(self)


def as_array(x: ArrayLike) -> np.ndarray:
    """Return a float64 ndarray view of ``x`` (no copy when possible)."""
    if isinstance(x, Tensor):
        return x.array
    return np.asarray(x, dtype=np.float64)


def strides(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides for ``shape``."""
    out = []
    acc = 1
    for d in reversed(shape):
        out.append(acc)
        acc *= d
    return tuple(reversed(out))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return Tensor.wrap(a @ b)


def reshape(t: ArrayLike, new_shape: Sequence[int]) -> Tensor:
    a = as_array(t)
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 1 for d in new_shape) or math.prod(new_shape) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {new_shape}")
    return Tensor.wrap(np.ascontiguousarray(a).reshape(new_shape))


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}


def elementwise(op: str, a: ArrayLike, b: ArrayLike | None = None) -> Tensor:
    """Pointwise ``op`` on ``a`` (and ``b``, same shape or scalar)."""
    x = as_array(a)
    if op == "exp":
        return Tensor.wrap(np.exp(x))
    if op == "log":
        if np.any(x <= 0):
            raise DomainError("log of a non-positive value")
        return Tensor.wrap(np.log(x))
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ValueError(f"{op} needs two operands")
    y = as_array(b)
    if y.ndim != 0 and y.shape != x.shape:
        raise ShapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")
    return Tensor.wrap(_BINARY[op](x, y))


# --- TNSR serialization -------------------------------------------------------

def write_tensor(fh: BinaryIO, t: ArrayLike) -> None:
    a = as_array(t)
    if a.ndim == 0:
        a = a.reshape(1)
    fh.write(TNSR_MAGIC)
    fh.write(struct.pack("<II", TNSR_VERSION, a.ndim))
    fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated TNSR data: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> Tensor:
    magic = _read_exact(fh, 4)
    if magic != TNSR_MAGIC:
        raise FormatError(f"bad TNSR magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(fh, 8))
    if version != TNSR_VERSION:
        raise FormatError(f"unsupported TNSR version {version}")
    if rank < 1:
        raise FormatError("TNSR rank must be >= 1")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    if any(d < 1 for d in shape):
        raise FormatError(f"TNSR extents must be >= 1, got {shape}")
    n = math.prod(shape)
    payload = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8")
    return Tensor.wrap(payload.astype(np.float64).reshape(shape))


def dumps(t: ArrayLike) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def loads(raw: bytes) -> Tensor:
    buf = io.BytesIO(raw)
    t = read_tensor(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after TNSR block")
    return t


def save(path, t: ArrayLike) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, t)


def load(path) -> Tensor:
    with open(path, "rb") as fh:
        return loads(fh.read())
