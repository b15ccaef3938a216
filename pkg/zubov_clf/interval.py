"""
Vectorized interval arithmetic and boxes.

Intervals hold numpy arrays of lower and upper endpoints, so a single
Interval can carry one enclosure per box of a whole branch-and-bound
frontier. Every elementary operation rounds its endpoints outward by at
least one ULP (``numpy.nextafter``), which keeps enclosures sound under
floating-point evaluation.

Undefined results (division by an interval containing zero, sqrt of a
negative interval) either raise EnclosureError (``strict=True``) or yield
infinite/NaN endpoints. NaN and infinite endpoints never satisfy the
``hi < bound`` style tests used to discharge boxes, so non-strict
enclosures stay sound inside the verifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import EnclosureError

ArrayLike = Union[float, Sequence[float], np.ndarray]

_EPS: float = float(np.finfo(np.float64).eps)
_TINY: float = float(np.finfo(np.float64).tiny)
_TWO_PI: float = 2.0 * math.pi
_HALF_PI: float = 0.5 * math.pi


# =============================================================================
# Rounding helpers
# =============================================================================

def round_down(x: np.ndarray, ulps: int = 1) -> np.ndarray:
    """Move every entry ``ulps`` representable numbers towards -inf."""
    out = np.asarray(x, dtype=np.float64)
    for _ in range(ulps):
        out = np.nextafter(out, -np.inf)
    return out


def round_up(x: np.ndarray, ulps: int = 1) -> np.ndarray:
    """Move every entry ``ulps`` representable numbers towards +inf."""
    out = np.asarray(x, dtype=np.float64)
    for _ in range(ulps):
        out = np.nextafter(out, np.inf)
    return out


# =============================================================================
# Interval
# =============================================================================

@dataclass(frozen=True)
class Interval:
    """
    Array of closed intervals [lo, hi].

    Attributes:
        lo: Lower endpoints (any shape)
        hi: Upper endpoints (same shape as lo)
    """
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        lo, hi = np.broadcast_arrays(lo, hi)
        object.__setattr__(self, "lo", np.array(lo))
        object.__setattr__(self, "hi", np.array(hi))

    # -------------------------------------------------------------------------
    # Construction
    # -------------------------------------------------------------------------

    @classmethod
    def point(cls, value: ArrayLike) -> Interval:
        """Degenerate interval [value, value]."""
        v = np.asarray(value, dtype=np.float64)
        return cls(v, v)

    @classmethod
    def of(cls, lo: ArrayLike, hi: ArrayLike) -> Interval:
        """Checked constructor: rejects lo > hi."""
        lo_arr = np.asarray(lo, dtype=np.float64)
        hi_arr = np.asarray(hi, dtype=np.float64)
        if np.any(lo_arr > hi_arr):
            raise ValueError("interval lower endpoint exceeds upper endpoint")
        return cls(lo_arr, hi_arr)

    # -------------------------------------------------------------------------
    # Accessors
    # -------------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.lo.shape

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def magnitude(self) -> np.ndarray:
        """Largest absolute value in each interval."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def __getitem__(self, index) -> Interval:
        return Interval(self.lo[index], self.hi[index])

    def __len__(self) -> int:
        return len(self.lo)

    def is_finite(self) -> np.ndarray:
        return np.isfinite(self.lo) & np.isfinite(self.hi)

    def contains(self, value: ArrayLike) -> np.ndarray:
        v = np.asarray(value, dtype=np.float64)
        return (self.lo <= v) & (v <= self.hi)

    def contains_zero(self) -> np.ndarray:
        return (self.lo <= 0.0) & (self.hi >= 0.0)

    def reshape(self, *shape: int) -> Interval:
        return Interval(self.lo.reshape(*shape), self.hi.reshape(*shape))

    def moveaxis(self, source: int, destination: int) -> Interval:
        return Interval(np.moveaxis(self.lo, source, destination),
                        np.moveaxis(self.hi, source, destination))

    def mid_rad(self) -> Tuple[np.ndarray, np.ndarray]:
        """Midpoint and a radius large enough to cover the interval."""
        mid = self.mid
        rad = round_up(np.maximum(self.hi - mid, mid - self.lo))
        return mid, rad

    # -------------------------------------------------------------------------
    # Arithmetic
    # -------------------------------------------------------------------------

    def __neg__(self) -> Interval:
        return Interval(-self.hi, -self.lo)

    def __add__(self, other: Union[Interval, ArrayLike]) -> Interval:
        o = _as_interval(other)
        return Interval(round_down(self.lo + o.lo), round_up(self.hi + o.hi))

    __radd__ = __add__

    def __sub__(self, other: Union[Interval, ArrayLike]) -> Interval:
        o = _as_interval(other)
        return Interval(round_down(self.lo - o.hi), round_up(self.hi - o.lo))

    def __rsub__(self, other: ArrayLike) -> Interval:
        return _as_interval(other) - self

    def __mul__(self, other: Union[Interval, ArrayLike]) -> Interval:
        if not isinstance(other, Interval):
            return self.scale(other)
        products = np.stack([
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ])
        # np.min/np.max propagate NaN (0 * inf), which keeps the result unusable
        return Interval(round_down(products.min(axis=0)), round_up(products.max(axis=0)))

    __rmul__ = __mul__

    def scale(self, factor: ArrayLike) -> Interval:
        """Multiply by exact real numbers (broadcast)."""
        c = np.asarray(factor, dtype=np.float64)
        a = self.lo * c
        b = self.hi * c
        return Interval(round_down(np.minimum(a, b)), round_up(np.maximum(a, b)))

    def reciprocal(self, strict: bool = True) -> Interval:
        """1 / x; raises EnclosureError (strict) when 0 lies in the interval."""
        zero = self.contains_zero()
        if strict and np.any(zero):
            raise EnclosureError("division by an interval containing zero")
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(zero, -np.inf, round_down(1.0 / self.hi))
            hi = np.where(zero, np.inf, round_up(1.0 / self.lo))
        return Interval(lo, hi)

    def __truediv__(self, other: Union[Interval, ArrayLike]) -> Interval:
        if not isinstance(other, Interval):
            c = np.asarray(other, dtype=np.float64)
            if np.any(c == 0.0):
                raise EnclosureError("division by zero constant")
            a = self.lo / c
            b = self.hi / c
            return Interval(round_down(np.minimum(a, b)), round_up(np.maximum(a, b)))
        return self * other.reciprocal(strict=True)

    def divide(self, other: Interval, strict: bool = True) -> Interval:
        return self * other.reciprocal(strict=strict)

    def abs(self) -> Interval:
        mag = self.magnitude
        low = np.where(self.contains_zero(), 0.0, np.minimum(np.abs(self.lo), np.abs(self.hi)))
        return Interval(low, mag)

    def sq(self) -> Interval:
        """Tight square via |x|."""
        a = self.abs()
        return Interval(np.maximum(round_down(a.lo * a.lo), 0.0), round_up(a.hi * a.hi))

    def power(self, exponent: int) -> Interval:
        """Integer power; even powers go through |x| and stay non-negative."""
        if exponent < 0:
            raise ValueError("only non-negative integer powers are supported")
        if exponent == 0:
            return Interval(np.ones(self.shape), np.ones(self.shape))
        if exponent == 1:
            return self
        if exponent % 2 == 0:
            a = self.abs()
            lo = np.maximum(round_down(a.lo ** exponent, exponent), 0.0)
            return Interval(lo, round_up(a.hi ** exponent, exponent))
        return Interval(round_down(self.lo ** exponent, exponent),
                        round_up(self.hi ** exponent, exponent))

    def sqrt(self, strict: bool = True) -> Interval:
        if strict and np.any(self.lo < 0.0):
            raise EnclosureError("sqrt of an interval reaching below zero")
        with np.errstate(invalid="ignore"):
            lo = np.sqrt(np.maximum(self.lo, 0.0))
            hi = np.where(self.hi < 0.0, np.nan, np.sqrt(np.maximum(self.hi, 0.0)))
        return Interval(np.maximum(round_down(lo), 0.0), round_up(hi))

    def exp(self) -> Interval:
        with np.errstate(over="ignore"):
            lo = np.maximum(round_down(np.exp(self.lo), 2), 0.0)
            hi = round_up(np.exp(self.hi), 2)
        return Interval(lo, hi)

    def tanh(self) -> Interval:
        lo = np.maximum(round_down(np.tanh(self.lo), 2), -1.0)
        hi = np.minimum(round_up(np.tanh(self.hi), 2), 1.0)
        return Interval(lo, hi)

    def sin(self) -> Interval:
        """Sine by monotonic pieces: extrema where pi/2 + k*pi lies inside."""
        lo, hi = self.lo, self.hi
        with np.errstate(invalid="ignore"):
            s_lo = np.sin(lo)
            s_hi = np.sin(hi)
            out_lo = np.minimum(s_lo, s_hi)
            out_hi = np.maximum(s_lo, s_hi)
            # maximum at pi/2 + 2k*pi
            k = np.floor((hi - _HALF_PI) / _TWO_PI)
            has_max = _HALF_PI + _TWO_PI * k >= lo
            # minimum at -pi/2 + 2k*pi
            k = np.floor((hi + _HALF_PI) / _TWO_PI)
            has_min = -_HALF_PI + _TWO_PI * k >= lo
        full = ~(self.width < _TWO_PI)
        out_hi = np.where(has_max | full, 1.0, round_up(out_hi, 2))
        out_lo = np.where(has_min | full, -1.0, round_down(out_lo, 2))
        return Interval(np.maximum(out_lo, -1.0), np.minimum(out_hi, 1.0))

    def cos(self) -> Interval:
        """Cosine by monotonic pieces: maxima at 2k*pi, minima at pi + 2k*pi."""
        lo, hi = self.lo, self.hi
        with np.errstate(invalid="ignore"):
            c_lo = np.cos(lo)
            c_hi = np.cos(hi)
            out_lo = np.minimum(c_lo, c_hi)
            out_hi = np.maximum(c_lo, c_hi)
            k = np.floor(hi / _TWO_PI)
            has_max = _TWO_PI * k >= lo
            k = np.floor((hi - math.pi) / _TWO_PI)
            has_min = math.pi + _TWO_PI * k >= lo
        full = ~(self.width < _TWO_PI)
        out_hi = np.where(has_max | full, 1.0, round_up(out_hi, 2))
        out_lo = np.where(has_min | full, -1.0, round_down(out_lo, 2))
        return Interval(np.maximum(out_lo, -1.0), np.minimum(out_hi, 1.0))

    # -------------------------------------------------------------------------
    # Reductions and linear maps
    # -------------------------------------------------------------------------

    def sum(self, axis: int = -1) -> Interval:
        """Sum along an axis with a floating-point error allowance."""
        count = self.lo.shape[axis]
        gamma = (count + 1) * _EPS
        s_lo = self.lo.sum(axis=axis)
        s_hi = self.hi.sum(axis=axis)
        slack_lo = gamma * np.abs(self.lo).sum(axis=axis) + _TINY
        slack_hi = gamma * np.abs(self.hi).sum(axis=axis) + _TINY
        return Interval(round_down(s_lo - slack_lo), round_up(s_hi + slack_hi))

    def matmul(self, matrix: np.ndarray) -> Interval:
        """
        Enclose ``x @ matrix.T`` for a real matrix (shape (out, in)).

        Uses the midpoint-radius form: exact for a real matrix up to the
        rounding allowance added to the radius.
        """
        W = np.asarray(matrix, dtype=np.float64)
        mid, rad = self.mid_rad()
        absW = np.abs(W)
        z_mid = mid @ W.T
        z_rad = rad @ absW.T
        gamma = (W.shape[1] + 2) * _EPS
        slack = gamma * (np.abs(mid) @ absW.T + z_rad) + _TINY
        radius = round_up(z_rad + slack)
        return Interval(round_down(z_mid - radius), round_up(z_mid + radius))

    def intersect(self, other: Interval) -> Interval:
        return Interval(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def clamp_below(self, floor: float) -> Interval:
        """Enclosure of max(x, floor)."""
        return Interval(np.maximum(self.lo, floor), np.maximum(self.hi, floor))

    def __repr__(self) -> str:
        if self.lo.ndim == 0:
            return f"Interval([{float(self.lo)!r}, {float(self.hi)!r}])"
        return f"Interval(shape={self.shape})"


def _as_interval(value: Union[Interval, ArrayLike]) -> Interval:
    if isinstance(value, Interval):
        return value
    return Interval.point(value)


def stack(intervals: Iterable[Interval], axis: int = -1) -> Interval:
    """Stack intervals along a new axis."""
    items = list(intervals)
    return Interval(np.stack([i.lo for i in items], axis=axis),
                    np.stack([i.hi for i in items], axis=axis))


# =============================================================================
# Box
# =============================================================================

@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box with finite closed edges.

    Attributes:
        lower: Lower corner, one entry per dimension
        upper: Upper corner, one entry per dimension
    """
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ValueError("box corners must be non-empty and of equal length")
        for lo, hi in zip(lower, upper):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("box edges must be finite")
            if lo > hi:
                raise ValueError(f"box edge [{lo}, {hi}] has lo > hi")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> Box:
        """Build from ``[[lo, hi], ...]``."""
        return cls(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @classmethod
    def cube(cls, dim: int, half_width: float) -> Box:
        """The symmetric box [-a, a]^dim."""
        return cls((-half_width,) * dim, (half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def widest_axis(self) -> int:
        return int(np.argmax(self.widths))

    def split(self, axis: int | None = None) -> Tuple[Box, Box]:
        """Bisect along ``axis`` (default: the widest edge)."""
        axis = self.widest_axis() if axis is None else axis
        mid = 0.5 * (self.lower[axis] + self.upper[axis])
        left_upper = list(self.upper)
        left_upper[axis] = mid
        right_lower = list(self.lower)
        right_lower[axis] = mid
        return Box(self.lower, tuple(left_upper)), Box(tuple(right_lower), self.upper)

    def contains(self, point: ArrayLike) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(self.lo <= p) and np.all(p <= self.hi))

    def contains_box(self, other: Box) -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def as_interval(self) -> Interval:
        return Interval(self.lo, self.hi)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples, shape (count, dim)."""
        return self.lo + (self.hi - self.lo) * rng.random((count, self.dim))

    def grid(self, resolution: int) -> np.ndarray:
        """Tensor grid with ``resolution`` points per axis, shape (resolution**dim, dim)."""
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def faces(self) -> list[Box]:
        """The 2*dim boundary faces as degenerate boxes."""
        result: list[Box] = []
        for axis in range(self.dim):
            for value in (self.lower[axis], self.upper[axis]):
                lower = list(self.lower)
                upper = list(self.upper)
                lower[axis] = upper[axis] = value
                result.append(Box(tuple(lower), tuple(upper)))
        return result

    def scaled(self, factor: float) -> Box:
        """Box scaled about its midpoint."""
        mid = self.midpoint
        half = 0.5 * self.widths * factor
        return Box(tuple(mid - half), tuple(mid + half))

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in zip(self.lower, self.upper)]
