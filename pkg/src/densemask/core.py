"""Unit-carrying 4D tensors and the centered coordinate convention.

A :class:`StructuredTensor` stores a dense ``(V, U, H, W)`` float64 array in
row-major ``(v, u, y, x)`` order. The ``VU`` axes use centered integer
coordinates ``[-n/2, n/2)``; the ``HW`` axes use ``[0, n)``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_INT_RTOL = 1e-9


class Repr(enum.Enum):
    NATURAL = 0
    ALIGNED = 1


@dataclass(frozen=True)
class Units:
    """Image pixels per sample step along the VU and HW axis pairs."""

    sigma_vu: float
    sigma_hw: float

    def __post_init__(self):
        if not (self.sigma_vu > 0 and self.sigma_hw > 0):
            raise ValueError(f"units must be positive, got {self}")
        if not (math.isfinite(self.sigma_vu) and math.isfinite(self.sigma_hw)):
            raise ValueError(f"units must be finite, got {self}")

    @property
    def alpha(self) -> float:
        return self.sigma_vu / self.sigma_hw

    def integer_alpha(self) -> int:
        """Return ``alpha`` as a positive int, or raise ``ValueError``."""
        return as_positive_int(self.alpha, "alpha = sigma_vu / sigma_hw")


def as_positive_int(value: float, what: str = "value") -> int:
    r = round(value)
    if r < 1 or not math.isclose(value, r, rel_tol=_INT_RTOL, abs_tol=_INT_RTOL):
        raise ValueError(f"{what} must be a positive integer, got {value!r}")
    return int(r)


def centered_coords(n: int) -> np.ndarray:
    """Integer coordinates of a VU axis of length ``n``: ``[-n//2, n - n//2)``."""
    return np.arange(n) - n // 2


def coord_range(n: int) -> tuple[int, int]:
    """Inclusive ``(lo, hi)`` centered coordinate bounds of an axis of length n."""
    return -(n // 2), n - 1 - n // 2


@dataclass(frozen=True, eq=False)
class StructuredTensor:
    """Dense ``(V, U, H, W)`` tensor tagged with a representation and units.

    The stored array is a private read-only float64 copy.
    """

    data: np.ndarray
    repr: Repr
    units: Units

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty 4D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def index(self, v: int, u: int, y: int, x: int) -> float:
        return index(self, v, u, y, x)

    def with_value(self, v: int, u: int, y: int, x: int, value: float) -> StructuredTensor:
        """Return a copy with one element replaced (tensors are immutable)."""
        arr = self.data.copy()
        arr[_array_index(self.shape, v, u, y, x)] = value
        return StructuredTensor(arr, self.repr, self.units)

    def retag(self, repr: Repr | None = None, units: Units | None = None) -> StructuredTensor:
        return StructuredTensor(self.data, repr or self.repr, units or self.units)

    @classmethod
    def zeros(cls, shape, repr: Repr, units: Units) -> StructuredTensor:
        return cls(np.zeros(shape), repr, units)

    def __eq__(self, other):
        if not isinstance(other, StructuredTensor):
            return NotImplemented
        return (
            self.repr == other.repr
            and self.units == other.units
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def _array_index(shape, v, u, y, x) -> tuple[int, int, int, int]:
    V, U, H, W = shape
    vlo, vhi = coord_range(V)
    ulo, uhi = coord_range(U)
    if not (vlo <= v <= vhi and ulo <= u <= uhi and 0 <= y < H and 0 <= x < W):
        raise IndexError(
            f"coordinate (v={v}, u={u}, y={y}, x={x}) outside domain "
            f"[{vlo},{vhi}] x [{ulo},{uhi}] x [0,{H}) x [0,{W})"
        )
    return v + V // 2, u + U // 2, y, x


def index(t: StructuredTensor, v: int, u: int, y: int, x: int) -> float:
    """Read one sample at centered ``(v, u)`` and grid ``(y, x)``; no clamping."""
    return float(t.data[_array_index(t.shape, v, u, y, x)])


def vu_to_image_offset(t: StructuredTensor, v: float, u: float) -> tuple[float, float]:
    """Image-pixel offset of mask sample ``(v, u)`` from its window center."""
    return v * t.units.sigma_vu, u * t.units.sigma_vu


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A ``(C, H, W)`` feature map with its stride in image pixels."""

    data: np.ndarray
    stride: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected (C, H, W) data, got shape {arr.shape}")
        if not self.stride > 0:
            raise ValueError("stride must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


# little-endian: 4 x u32 shape, 2 x f64 units, 1 byte repr tag, then raw f64
_HEADER = struct.Struct("<4I2dB")


def dumps_tensor(t: StructuredTensor) -> bytes:
    header = _HEADER.pack(*t.shape, t.units.sigma_vu, t.units.sigma_hw, t.repr.value)
    return header + t.data.astype("<f8").tobytes(order="C")


def loads_tensor(buf: bytes) -> StructuredTensor:
    if len(buf) < _HEADER.size:
        raise ValueError("buffer too short for tensor header")
    V, U, H, W, svu, shw, tag = _HEADER.unpack_from(buf)
    n = V * U * H * W
    body = buf[_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"expected {8 * n} data bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<f8").reshape(V, U, H, W)
    return StructuredTensor(data, Repr(tag), Units(svu, shw))


def save_tensor(path, t: StructuredTensor) -> None:
    Path(path).write_bytes(dumps_tensor(t))


def load_tensor(path) -> StructuredTensor:
    return loads_tensor(Path(path).read_bytes())
