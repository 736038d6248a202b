"""Temporal aggregation of feature spikes and division-free L2 normalization.

The normalization emulates two populations: per-element squaring and
rescaling neurons, and one neuron that turns the sum of squares into an
inverse square root from a lookup table plus Newton refinement. Everything
on that path uses shifts, multiplies, adds and table reads; only the table
itself is built with real arithmetic, once per configuration.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

GRADED_MAX = (1 << 23) - 1
MANT_BITS = 30  # fractional bits of the normalized mantissa m in [1, 2)
LUT_BITS_OUT = 30  # fractional bits of LUT entries and of the inverse-sqrt mantissa
U_LIMIT = 1 << 62


@dataclass(frozen=True)
class NormConfig:
    f_out: int = 15
    lut_bits: int = 8
    newton_steps: int = 1

    def __post_init__(self):
        if not 4 <= self.lut_bits <= 12:
            raise ValueError("lut_bits must lie in [4, 12]")
        if not 1 <= self.f_out <= 15:
            raise ValueError("f_out must lie in [1, 15]")
        if self.newton_steps not in (0, 1, 2):
            raise ValueError("newton_steps must be 0, 1 or 2")


def accumulate(stream, dim: int) -> np.ndarray:
    """Per-dimension spike totals of a clip (the graded vector discharged at clip end).

    ``stream`` is a sequence of active-index arrays, one per timestep, or a
    dense ``(T, dim)`` 0/1 array.
    """
    if isinstance(stream, np.ndarray) and stream.ndim == 2:
        if stream.shape[1] != dim:
            raise ValueError(f"stream has dimension {stream.shape[1]}, expected {dim}")
        total = stream.astype(np.int64).sum(axis=0)
    else:
        steps = [np.asarray(s, dtype=np.int64).ravel() for s in stream]
        flat = np.concatenate(steps) if steps else np.zeros(0, dtype=np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= dim):
            raise ValueError(f"spike index outside dimension {dim}")
        total = np.bincount(flat, minlength=dim).astype(np.int64)
    if np.any(np.abs(total) > GRADED_MAX):
        raise OverflowError("aggregated value exceeds the 24-bit graded range")
    return total


@functools.lru_cache(maxsize=None)
def _lut(lut_bits: int) -> np.ndarray:
    # build time: midpoint of each mantissa interval, real arithmetic
    i = np.arange(1 << lut_bits)
    m_mid = 1.0 + (i + 0.5) / (1 << lut_bits)
    table = np.round(2.0**LUT_BITS_OUT / np.sqrt(m_mid)).astype(np.int64)
    table.setflags(write=False)
    return table


_INV_SQRT2 = int(round(2.0**LUT_BITS_OUT / np.sqrt(2.0)))


def inv_sqrt_table(cfg: NormConfig = NormConfig()) -> np.ndarray:
    """LUT entries (Q1.30 approximations of 1/sqrt(m) over m in [1, 2))."""
    return _lut(cfg.lut_bits)


def lut_dump(cfg: NormConfig = NormConfig()) -> str:
    rows = ["index,entry"] + [f"{i},{v}" for i, v in enumerate(inv_sqrt_table(cfg).tolist())]
    return "\n".join(rows) + "\n"


def _floor_log2(u: np.ndarray) -> np.ndarray:
    n = np.zeros(u.shape, dtype=np.int64)
    v = u.copy()
    for s in (32, 16, 8, 4, 2, 1):
        big = v >= (1 << s)
        n += big * s
        v = np.where(big, v >> s, v)
    return n


def inv_sqrt_fixed(u, cfg: NormConfig = NormConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fixed-point 1/sqrt(u) for integers 1 <= u < 2**62.

    Returns ``(mantissa, shift)`` with ``1/sqrt(u) ~ mantissa * 2**-shift``.
    """
    u = np.asarray(u, dtype=np.int64)
    if np.any(u < 1):
        raise ValueError("inverse square root needs u >= 1")
    n = _floor_log2(u)
    left = np.maximum(MANT_BITS - n, 0)
    right = np.maximum(n - MANT_BITS, 0)
    m = (u << left) >> right  # m * 2**-MANT_BITS in [1, 2)

    a = cfg.lut_bits
    y = _lut(a)[(m >> (MANT_BITS - a)) - (1 << a)]
    three = 3 << LUT_BITS_OUT
    for _ in range(cfg.newton_steps):
        y2 = (y * y) >> LUT_BITS_OUT
        my2 = (m * y2) >> MANT_BITS
        y = (y * (three - my2)) >> (LUT_BITS_OUT + 1)

    odd = (n & 1).astype(bool)
    y = np.where(odd, (y * _INV_SQRT2) >> LUT_BITS_OUT, y)
    return y, LUT_BITS_OUT + (n >> 1)


@dataclass(frozen=True)
class InvSqrt:
    mantissa: int
    shift: int

    @property
    def value(self) -> float:
        return self.mantissa * 2.0**-self.shift


def fixed_inv_sqrt(u: int, cfg: NormConfig = NormConfig()) -> InvSqrt:
    if u < 1:
        raise ValueError("inverse square root needs u >= 1")
    if u >= U_LIMIT:
        raise OverflowError("u must be below 2**62")
    mant, shift = inv_sqrt_fixed(np.array([u], dtype=np.int64), cfg)
    return InvSqrt(int(mant[0]), int(shift[0]))


@dataclass(frozen=True)
class NormalizedVector:
    """Signed fixed-point vector, element ``i`` worth ``values[i] * 2**-frac_bits``."""

    values: np.ndarray
    frac_bits: int

    def __len__(self) -> int:
        return len(self.values)

    def real(self) -> np.ndarray:
        return self.values * 2.0**-self.frac_bits


def normalize_batch(x, cfg: NormConfig = NormConfig()) -> np.ndarray:
    """Row-wise fixed-point L2 normalization of an ``(N, D)`` integer array to Q1.f_out."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("expected a 2-D batch")
    if not np.issubdtype(x.dtype, np.integer):
        raise TypeError("graded vectors must be integer-valued")
    x = x.astype(np.int64)
    if np.any(np.abs(x) > GRADED_MAX):
        raise OverflowError("graded value exceeds 24 bits")
    if x.shape[1] > 4096:
        raise ValueError("dimension above 4096 can overflow the sum of squares")
    # squaring population, then the sum arriving at the inverse-sqrt neuron
    sumsq = (x * x).sum(axis=1)
    if np.any(sumsq == 0):
        raise ValueError("cannot normalize a zero vector (empty clip)")
    mant, shift = inv_sqrt_fixed(sumsq, cfg)
    # broadcast back; each element multiplies and rounds to nearest
    s = (shift - cfg.f_out)[:, None]
    prod = np.abs(x) * mant[:, None]
    q = (prod + (np.int64(1) << (s - 1))) >> s
    return (np.sign(x) * q).astype(np.int32)


def normalize_vector(x, cfg: NormConfig = NormConfig()) -> NormalizedVector:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("expected a 1-D graded vector")
    return NormalizedVector(normalize_batch(x[None, :], cfg)[0], cfg.f_out)


def to_graded(features, bits: int = 16) -> np.ndarray:
    """Map real-valued features onto signed integers (per-row peak at 2**(bits-1) - 1).

    Lets float feature sets enter the fixed-point path; spike-count features
    are already integers and need no conversion.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    peak = np.abs(f).max(axis=1, keepdims=True)
    peak[peak == 0] = 1.0
    out = np.round(f / peak * ((1 << (bits - 1)) - 1)).astype(np.int64)
    return out if np.ndim(features) == 2 else out[0]
