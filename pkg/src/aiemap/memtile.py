"""Memory-tile buffers and their DMA tilers.

Conventions
-----------
``buffer_dims`` and ``tile_dims`` are listed outermost first, like a numpy
shape, and the buffer is row-major.  A traversal is a list of
``(dim, stride, wrap)`` entries; the LAST entry iterates fastest.  Each entry
moves the tile origin by ``stride`` elements along ``dim`` and visits
``wrap`` positions.  Inside a tile, elements stream out row-major.

For an 8x8 buffer read in 4x4 tiles with ``[(0, 4, 2), (1, 4, 2)]``::

    +----+----+
    | t0 | t1 |     t0 origin (0,0)   t1 origin (0,4)
    +----+----+
    | t2 | t3 |     t2 origin (4,0)   t3 origin (4,4)
    +----+----+

Strides count elements of the buffer's element type, never bytes.
Coordinates outside ``buffer_dims`` read as zero when ``pad_out_of_bounds``
is set, and writes to them are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import IntDType, dtype_range
from .errors import InfeasibleError, InvariantViolation, ValidationError

MAX_DIMS = 3


@dataclass(frozen=True)
class DmaTiler:
    buffer_dims: tuple[int, ...]
    tile_dims: tuple[int, ...]
    traversal: tuple[tuple[int, int, int], ...]
    elem_dtype: IntDType = IntDType.i8
    pad_out_of_bounds: bool = True
    offset: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "buffer_dims", tuple(int(x) for x in self.buffer_dims))
        object.__setattr__(self, "tile_dims", tuple(int(x) for x in self.tile_dims))
        object.__setattr__(self, "traversal", tuple(tuple(int(x) for x in e) for e in self.traversal))
        nd = len(self.buffer_dims)
        if self.offset is None:
            object.__setattr__(self, "offset", (0,) * nd)
        else:
            object.__setattr__(self, "offset", tuple(int(x) for x in self.offset))
        if not 1 <= nd <= MAX_DIMS:
            raise ValidationError(f"tilers support 1..{MAX_DIMS} dims, got {nd}")
        if len(self.tile_dims) != nd or len(self.offset) != nd:
            raise ValidationError("buffer_dims, tile_dims and offset must have the same rank")
        if min(self.buffer_dims) < 1 or min(self.tile_dims) < 1:
            raise ValidationError("buffer and tile dims must be positive")
        for dim, stride, wrap in self.traversal:
            if not 0 <= dim < nd:
                raise ValidationError(f"traversal dim {dim} out of range for rank {nd}")
            if stride < 0 or wrap < 1:
                raise ValidationError("traversal stride must be >= 0 and wrap >= 1")

    @property
    def n_tiles(self) -> int:
        return math.prod(w for _, _, w in self.traversal)

    @property
    def tile_size(self) -> int:
        return math.prod(self.tile_dims)

    @property
    def n_elements(self) -> int:
        return self.n_tiles * self.tile_size

    def tile_origins(self) -> np.ndarray:
        """(n_tiles, ndim) origins in stream order."""
        nd = len(self.buffer_dims)
        if not self.traversal:
            return np.array([self.offset], dtype=np.int64)
        grids = np.meshgrid(*[np.arange(w) for _, _, w in self.traversal], indexing="ij")
        origins = np.tile(np.asarray(self.offset, dtype=np.int64), (grids[0].size, 1))
        for (dim, stride, _), g in zip(self.traversal, grids):
            origins[:, dim] += g.reshape(-1) * stride
        assert origins.shape[1] == nd
        return origins

    def coordinates(self) -> np.ndarray:
        """(n_elements, ndim) buffer coordinates in stream order."""
        inner = np.indices(self.tile_dims).reshape(len(self.tile_dims), -1).T
        return (self.tile_origins()[:, None, :] + inner[None, :, :]).reshape(-1, len(self.tile_dims))

    def to_dict(self) -> dict:
        return {
            "buffer_dims": list(self.buffer_dims),
            "tile_dims": list(self.tile_dims),
            "traversal": [list(e) for e in self.traversal],
            "offset": list(self.offset),
            "elem_dtype": self.elem_dtype.name,
            "pad_out_of_bounds": self.pad_out_of_bounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DmaTiler":
        return cls(
            buffer_dims=tuple(d["buffer_dims"]),
            tile_dims=tuple(d["tile_dims"]),
            traversal=tuple(tuple(e) for e in d["traversal"]),
            offset=tuple(d.get("offset") or [0] * len(d["buffer_dims"])),
            elem_dtype=IntDType.parse(d["elem_dtype"]),
            pad_out_of_bounds=bool(d["pad_out_of_bounds"]),
        )


def _resolve(t: DmaTiler, shape: tuple[int, ...]):
    if tuple(shape) != t.buffer_dims:
        raise ValidationError(f"tiler expects buffer {t.buffer_dims}, got {tuple(shape)}")
    coords = t.coordinates()
    inb = np.all((coords >= 0) & (coords < np.asarray(t.buffer_dims)), axis=1)
    if not t.pad_out_of_bounds and not inb.all():
        bad = coords[~inb][0]
        raise ValidationError(f"tiler addresses {tuple(int(c) for c in bad)} outside buffer {t.buffer_dims}")
    flat = np.zeros(len(coords), dtype=np.int64)
    flat[inb] = np.ravel_multi_index(tuple(coords[inb].T), t.buffer_dims)
    return flat, inb


def has_overlap(t: DmaTiler) -> bool:
    """True if some in-bounds element is addressed more than once."""
    flat, inb = _resolve(t, t.buffer_dims)
    idx = flat[inb]
    return len(np.unique(idx)) != len(idx)


@dataclass
class _Access:
    phase: int
    bank: int
    op: str
    port: str


class MemTileBuffer:
    """A double-buffered memory-tile allocation.

    During phase ``p`` writers fill bank ``p % 2`` and readers drain the
    other bank.  :meth:`swap` advances the phase.  Every access is logged;
    :meth:`verify_phases` fails if a bank was read and written in one phase.
    """

    def __init__(self, dims, dtype: IntDType = IntDType.i8, name: str = ""):
        self.dims = tuple(int(x) for x in dims)
        self.dtype = dtype
        self.name = name
        self.banks = [np.zeros(self.dims, dtype=np.int64), np.zeros(self.dims, dtype=np.int64)]
        self.phase = 0
        self.log: list[_Access] = []

    @property
    def write_bank(self) -> int:
        return self.phase % 2

    @property
    def read_bank(self) -> int:
        return (self.phase + 1) % 2

    @property
    def nbytes(self) -> int:
        return 2 * math.prod(self.dims) * self.dtype.nbytes

    def swap(self):
        self.phase += 1

    def data(self, bank: int | None = None) -> np.ndarray:
        return self.banks[self.read_bank if bank is None else bank]

    def record(self, bank: int, op: str, port: str = ""):
        self.log.append(_Access(self.phase, bank, op, port))

    def verify_phases(self):
        seen: dict[tuple[int, int], set[str]] = {}
        for a in self.log:
            ops = seen.setdefault((a.phase, a.bank), set())
            ops.add(a.op)
            if ops == {"read", "write"}:
                raise InvariantViolation(
                    f"memtile {self.name or '?'}: bank {a.bank} read and written in phase {a.phase}")


def tiler_read(buf, t: DmaTiler, bank: int | None = None, port: str = "") -> np.ndarray:
    """Stream a buffer through a read tiler (zeros outside the buffer)."""
    if isinstance(buf, MemTileBuffer):
        b = buf.read_bank if bank is None else bank
        buf.record(b, "read", port)
        arr = buf.banks[b]
    else:
        arr = np.asarray(buf)
    flat, inb = _resolve(t, arr.shape)
    out = np.zeros(len(flat), dtype=np.int64)
    out[inb] = arr.reshape(-1)[flat[inb]]
    return out


def tiler_write(buf, t: DmaTiler, stream, bank: int | None = None, port: str = ""):
    """Scatter ``stream`` into the buffer along the tiler's addresses.

    Returns the updated array (the bank itself for a MemTileBuffer).
    """
    stream = np.asarray(stream, dtype=np.int64).reshape(-1)
    if stream.size != t.n_elements:
        raise ValidationError(f"stream has {stream.size} elements, tiler addresses {t.n_elements}")
    if isinstance(buf, MemTileBuffer):
        if t.elem_dtype.bits > buf.dtype.bits:
            raise ValidationError(
                f"cannot write {t.elem_dtype.name} elements into {buf.dtype.name} memtile buffer")
        b = buf.write_bank if bank is None else bank
        buf.record(b, "write", port)
        arr = buf.banks[b]
    else:
        arr = np.asarray(buf)
    lo, hi = dtype_range(t.elem_dtype)
    if stream.size and (stream.min() < lo or stream.max() > hi):
        raise ValidationError(f"stream values exceed {t.elem_dtype.name} range")
    flat, inb = _resolve(t, arr.shape)
    view = arr.reshape(-1)
    view[flat[inb]] = stream[inb]
    return arr


def broadcast_read(buf, t: DmaTiler, fanout: int, bank: int | None = None) -> list[np.ndarray]:
    """One logical read replicated to ``fanout`` destinations (e.g. a tile column)."""
    if fanout < 1:
        raise ValidationError("fanout must be >= 1")
    s = tiler_read(buf, t, bank=bank, port="broadcast")
    return [s.copy() for _ in range(fanout)]


def matrix_to_blocks(x: np.ndarray, bm: int, bn: int) -> np.ndarray:
    """Stream a padded 2-D matrix as row-major bm x bn blocks, row-tile outermost."""
    r, c = x.shape
    return x.reshape(r // bm, bm, c // bn, bn).transpose(0, 2, 1, 3).reshape(-1)


def blocks_to_matrix(stream: np.ndarray, rows: int, cols: int, bm: int, bn: int) -> np.ndarray:
    return np.asarray(stream).reshape(rows // bm, cols // bn, bm, bn).transpose(0, 2, 1, 3).reshape(rows, cols)


def round_up(x: int, m: int) -> int:
    return -(-x // m) * m


def block_tiler(dims, block, elem_dtype: IntDType, offset=(0, 0), extent=None) -> DmaTiler:
    """Tiler that walks ``extent`` (default: all of ``dims``) in ``block`` tiles.

    The traversal covers the extent rounded up to whole blocks; anything past
    the buffer edge is padding.
    """
    rows, cols = dims
    er, ec = extent if extent is not None else (rows, cols)
    bm, bn = block
    return DmaTiler(
        buffer_dims=(rows, cols),
        tile_dims=(bm, bn),
        traversal=((0, bm, -(-er // bm)), (1, bn, -(-ec // bn))),
        elem_dtype=elem_dtype,
        pad_out_of_bounds=True,
        offset=tuple(offset),
    )


def plan_retile(producer_tiling, consumer_tiling, dims, dtypes, capacity_bytes: int | None = None):
    """Write/read tiler pair that re-blocks a rows x features activation.

    ``producer_tiling`` is the producer's (M, N) output block, ``consumer_tiling``
    the consumer's (M, K) input block, ``dims`` the logical (rows, features)
    and ``dtypes`` the (producer out, consumer in) element types.  The read
    side covers the extent rounded up to whole consumer blocks, so columns
    past ``features`` arrive as zeros.
    """
    rows, feats = (int(x) for x in dims)
    p_dt, c_dt = (IntDType.parse(d) for d in dtypes)
    if p_dt.bits > c_dt.bits:
        raise ValidationError(f"producer dtype {p_dt.name} is wider than consumer dtype {c_dt.name}")
    if capacity_bytes is not None:
        need = 2 * rows * feats * c_dt.nbytes
        if need > capacity_bytes:
            raise InfeasibleError(f"memtile buffer needs {need} B (ping-pong), capacity {capacity_bytes} B")
    write = block_tiler((rows, feats), producer_tiling, p_dt)
    read = block_tiler((rows, feats), consumer_tiling, c_dt)
    return write, read
