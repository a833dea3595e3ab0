"""Shift-round-saturate arithmetic and two's-complement wrapping.

Scalar helpers work on Python ints (unbounded); the ``*_array`` variants work
on int64 numpy arrays and produce identical results for every value that
fits in int64.
"""

from __future__ import annotations

import numpy as np

from .device import IntDType, dtype_range

ROUNDING_MODES = ("half_even", "half_up", "floor")


def wrap(value: int, d: IntDType) -> int:
    """Reduce ``value`` into ``d``'s range modulo 2**bits."""
    bits = d.bits
    v = value & ((1 << bits) - 1)
    return v - (1 << bits) if v >> (bits - 1) else v


def wrap_array(x: np.ndarray, d: IntDType) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if d.bits >= 64:
        return x
    bits = d.bits
    half = np.int64(1 << (bits - 1))
    mask = np.int64((1 << bits) - 1)
    return ((x + half) & mask) - half


def saturate(value: int, d: IntDType) -> int:
    lo, hi = dtype_range(d)
    return lo if value < lo else hi if value > hi else value


def round_shift(value: int, shift: int, rounding: str = "half_even") -> int:
    """``value / 2**shift`` rounded to an integer."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    if shift == 0:
        return value
    q = value >> shift
    r = value & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if rounding == "half_even":
        return q + (r > half or (r == half and (q & 1)))
    if rounding == "half_up":
        return q + (r >= half)
    if rounding == "floor":
        return q
    raise ValueError(f"unknown rounding mode {rounding!r}")


def srs(acc_value: int, shift: int, out: IntDType, relu: bool = False,
        rounding: str = "half_even") -> int:
    """Shift, round, optional ReLU, saturate to ``out``."""
    v = round_shift(int(acc_value), shift, rounding)
    if relu and v < 0:
        v = 0
    return saturate(v, out)


def srs_array(acc: np.ndarray, shift: int, out: IntDType, relu: bool = False,
              rounding: str = "half_even") -> np.ndarray:
    acc = np.asarray(acc, dtype=np.int64)
    if shift < 0:
        raise ValueError("shift must be non-negative")
    if shift == 0:
        v = acc.copy()
    elif shift >= 64:
        # only the sign survives; half_even/half_up both round -0.5.. to 0
        v = np.where(acc < 0, -1, 0).astype(np.int64) if rounding == "floor" else np.zeros_like(acc)
    else:
        q = acc >> shift
        r = acc & np.int64((1 << shift) - 1)
        half = np.int64(1 << (shift - 1))
        if rounding == "half_even":
            up = (r > half) | ((r == half) & ((q & 1) == 1))
        elif rounding == "half_up":
            up = r >= half
        elif rounding == "floor":
            up = np.zeros(acc.shape, dtype=bool)
        else:
            raise ValueError(f"unknown rounding mode {rounding!r}")
        v = q + up.astype(np.int64)
    if relu:
        v = np.maximum(v, 0)
    lo, hi = dtype_range(out)
    return np.clip(v, lo, hi)


def quantize_float(x, target: IntDType, shift: int) -> np.ndarray:
    """Round-half-even of ``x * 2**shift`` saturated to ``target``."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    scaled = np.asarray(x, dtype=np.float64) * float(2 ** shift)
    lo, hi = dtype_range(target)
    # np.rint is round-half-to-even; clip before the cast so huge values don't overflow
    return np.clip(np.rint(scaled), lo, hi).astype(np.int64)
