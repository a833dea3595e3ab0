"""Bit-exact model of one compute tile running the blocked linear kernel.

The kernel multiplies a batch-major activation slice ``A`` (rows x f_in) by a
packed weight slice and produces rows x f_out outputs.  Work is organised in
<M,K,N> tiles; every iteration of the inner loop loads two M x K tiles of A
and two K x N tiles of W and updates four accumulator blocks C00, C01, C10,
C11.  Accumulation order is fixed: for each output block, K slices are added
in ascending order, each partial product wrapped into the accumulator width.
Because wrapping is a ring homomorphism the result does not depend on how
blocks are grouped, only the trace (and therefore the timing) does.

Packed weight layout (what :func:`pack_slice` produces and ``run_kernel``
consumes): N-tiles outermost, then K-tiles, then each K x N block row-major.
That is the order the kernel issues its VLDB loads for one output tile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .device import DeviceDesc, IntDType
from .errors import ValidationError
from .fixedpoint import srs_array, wrap_array

CASCADE_ROLES = ("solo", "head", "middle", "tail")

_NATIVE = {
    (IntDType.i8, IntDType.i8): (4, 8, 8),
    (IntDType.i16, IntDType.i8): (4, 4, 8),
    (IntDType.i16, IntDType.i16): (4, 4, 4),
}
# non-native shapes are emulated with several intrinsic calls
_EXTRA_SHAPES = {(2, 8, 8), (8, 8, 8), (4, 16, 8), (2, 4, 8), (8, 4, 8),
                 (4, 8, 4), (2, 4, 4), (8, 4, 4), (4, 8, 16)}
SUPPORTED_TILINGS = {
    pair: frozenset(set(_NATIVE.values()) | _EXTRA_SHAPES) for pair in _NATIVE
}


@dataclass(frozen=True)
class Tiling:
    m: int
    k: int
    n: int
    native: bool = False

    def __post_init__(self):
        if min(self.m, self.k, self.n) < 1:
            raise ValidationError(f"tile dims must be positive, got {self.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m, self.k, self.n)

    def __str__(self):
        return f"<{self.m},{self.k},{self.n}>"


def native_tiling(act: IntDType, wgt: IntDType, device: DeviceDesc | None = None) -> Tiling:
    table = device.native_tilings if device is not None and device.native_tilings else _NATIVE
    try:
        return Tiling(*table[(act, wgt)], native=True)
    except KeyError:
        raise ValidationError(f"no native tiling for {act.name}x{wgt.name}") from None


def make_tiling(shape, act: IntDType, wgt: IntDType, device: DeviceDesc | None = None) -> Tiling:
    """Build a Tiling for ``shape`` and flag whether it is native for the pair.

    Raises ValidationError if the shape is outside the supported set.
    """
    shape = tuple(int(x) for x in shape)
    if len(shape) != 3:
        raise ValidationError(f"tiling must have three dims, got {shape}")
    supported = SUPPORTED_TILINGS.get((act, wgt))
    nat = native_tiling(act, wgt, device).shape
    if supported is None or (shape not in supported and shape != nat):
        raise ValidationError(f"tiling <{','.join(map(str, shape))}> not supported for {act.name}x{wgt.name}")
    return Tiling(*shape, native=shape == nat)


def emulation_calls(t: Tiling, native: Tiling) -> int:
    """Number of native intrinsic calls needed to cover one ``t`` tile."""
    return math.ceil(t.m / native.m) * math.ceil(t.k / native.k) * math.ceil(t.n / native.n)


@dataclass
class KernelIO:
    """Buffers of one kernel invocation.

    ``a`` is rows x f_in (already padded by the memory tile), ``w`` the packed
    weight blob for this tile, ``f_out`` the output slice width.  Cascade
    streams are accumulator-width rows x f_out matrices.
    """

    a: np.ndarray
    w: np.ndarray
    f_out: int
    act_dtype: IntDType
    wgt_dtype: IntDType
    acc_dtype: IntDType
    out_dtype: IntDType
    bias: np.ndarray | None = None
    cascade_in: np.ndarray | None = None
    cascade_out: np.ndarray | None = None
    out: np.ndarray | None = None


def _check_io(io: KernelIO, t: Tiling, role: str):
    if role not in CASCADE_ROLES:
        raise ValueError(f"cascade_role must be one of {CASCADE_ROLES}")
    # device-native tilings of custom devices are trusted as-is
    if not t.native and t.shape not in SUPPORTED_TILINGS.get((io.act_dtype, io.wgt_dtype), ()):
        raise ValidationError(f"tiling {t} not supported for {io.act_dtype.name}x{io.wgt_dtype.name}")
    a = np.asarray(io.a)
    if a.ndim != 2:
        raise ValidationError(f"kernel input must be 2-D, got shape {a.shape}")
    rows, f_in = a.shape
    if rows % t.m or f_in % t.k or io.f_out % t.n:
        raise ValidationError(
            f"kernel shape rows={rows} f_in={f_in} f_out={io.f_out} not divisible by tiling {t}")
    if np.asarray(io.w).size < f_in * io.f_out:
        raise ValidationError(f"weight blob has {np.asarray(io.w).size} elements, need {f_in * io.f_out}")
    needs_cascade = role in ("middle", "tail")
    if needs_cascade != (io.cascade_in is not None):
        raise ValidationError(f"cascade_in must be {'present' if needs_cascade else 'absent'} for role {role}")
    if io.cascade_in is not None and np.shape(io.cascade_in) != (rows, io.f_out):
        raise ValidationError(f"cascade_in shape {np.shape(io.cascade_in)} != {(rows, io.f_out)}")
    if io.bias is not None and np.size(io.bias) != io.f_out:
        raise ValidationError(f"bias has {np.size(io.bias)} entries, expected {io.f_out}")


def run_kernel(io: KernelIO, t: Tiling, shift: int, use_bias: bool = False, use_relu: bool = False,
               cascade_role: str = "solo", rounding: str = "half_even") -> np.ndarray:
    """Execute one tile's blocked multiply-accumulate.

    solo / tail: returns the stored rows x f_out output in ``out_dtype``
    (SRS, then ReLU, then saturation) and sets ``io.out``.
    head / middle: returns the raw accumulator-width partial sums that leave
    on the cascade port and sets ``io.cascade_out``; nothing is stored.

    Bias is loaded into the accumulators in the prologue of the tile that
    starts the accumulation (solo or head).
    """
    if shift < 0:
        raise ValidationError("shift must be non-negative")
    _check_io(io, t, cascade_role)
    a = np.asarray(io.a, dtype=np.int64)
    rows, f_in = a.shape
    mt, kt, nt = rows // t.m, f_in // t.k, io.f_out // t.n

    a_blocks = a.reshape(mt, t.m, kt, t.k)
    w_blocks = np.asarray(io.w, dtype=np.int64)[: f_in * io.f_out].reshape(nt, kt, t.k, t.n)

    acc = np.zeros((mt, nt, t.m, t.n), dtype=np.int64)
    if use_bias and cascade_role in ("solo", "head"):
        if io.bias is None:
            raise ValidationError("use_bias set but no bias supplied")
        acc += np.asarray(io.bias, dtype=np.int64).reshape(1, nt, 1, t.n)
    if io.cascade_in is not None:
        acc += np.asarray(io.cascade_in, dtype=np.int64).reshape(mt, t.m, nt, t.n).transpose(0, 2, 1, 3)
    acc = wrap_array(acc, io.acc_dtype)

    for k in range(kt):
        acc = wrap_array(acc + np.einsum("imk,jkn->ijmn", a_blocks[:, :, k, :], w_blocks[:, k]), io.acc_dtype)

    flat = acc.transpose(0, 2, 1, 3).reshape(rows, io.f_out)
    if cascade_role in ("head", "middle"):
        io.cascade_out = flat
        return flat
    io.out = srs_array(flat, shift, io.out_dtype, relu=use_relu, rounding=rounding)
    return io.out


def pack_slice(w_slice: np.ndarray, t: Tiling) -> np.ndarray:
    """Pack an f_in x f_out weight slice (already padded) into kernel load order."""
    f_in, f_out = w_slice.shape
    kt, nt = f_in // t.k, f_out // t.n
    return np.asarray(w_slice).reshape(kt, t.k, nt, t.n).transpose(2, 0, 1, 3).reshape(-1)


def unpack_slice(blob: np.ndarray, f_in: int, f_out: int, t: Tiling) -> np.ndarray:
    kt, nt = f_in // t.k, f_out // t.n
    return np.asarray(blob)[: f_in * f_out].reshape(nt, kt, t.k, t.n).transpose(1, 2, 0, 3).reshape(f_in, f_out)


class Event(NamedTuple):
    op: str          # BIAS_LOAD, VLDA, VLDB, VMAC, VST
    group: int       # index of the 2x2 accumulator group
    row: int = -1    # M-tile index
    col: int = -1    # N-tile index
    k: int = -1      # K-slice index


def blocked_schedule_trace(t: Tiling, dims, use_bias: bool = False) -> list[Event]:
    """Event trace of the 2x2-blocked schedule for a rows x f_in x f_out problem.

    Row tiles and column tiles are taken in pairs; an odd tile at the edge
    yields a degenerate 1x2, 2x1 or 1x1 group.  Within a group each K slice
    issues one VLDA per row tile, one VLDB per column tile and one VMAC per
    (row, col) pair, so every loaded tile is reused by all accumulators of
    the group.  The group ends with one VST (SRS fused) per accumulator.
    """
    rows, f_in, f_out = dims
    if rows % t.m or f_in % t.k or f_out % t.n:
        raise ValidationError(f"dims {tuple(dims)} not divisible by tiling {t}")
    mt, kt, nt = rows // t.m, f_in // t.k, f_out // t.n
    trace: list[Event] = []
    g = 0
    for r0 in range(0, mt, 2):
        rws = list(range(r0, min(r0 + 2, mt)))
        for c0 in range(0, nt, 2):
            cls = list(range(c0, min(c0 + 2, nt)))
            if use_bias:
                trace.extend(Event("BIAS_LOAD", g, col=c) for c in cls)
            for k in range(kt):
                trace.extend(Event("VLDA", g, row=r, k=k) for r in rws)
                trace.extend(Event("VLDB", g, col=c, k=k) for c in cls)
                trace.extend(Event("VMAC", g, row=r, col=c, k=k) for r in rws for c in cls)
            trace.extend(Event("VST", g, row=r, col=c) for r in rws for c in cls)
            g += 1
    return trace
