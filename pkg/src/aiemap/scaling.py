"""Per-layer parallelisation over a cas_len x cas_num rectangle of tiles.

Tile (i, j) sits at cascade position ``i`` (west to east) of cascade row
``j``.  It holds the weights for input features
``[i*f_in_slice, (i+1)*f_in_slice)`` and output features
``[j*f_out_slice, (j+1)*f_out_slice)``.  Partial sums flow west to east over
the cascade; row ``j``'s tail stores that row's output slice.  Column ``i``
receives its input slice once from the memory tile, broadcast to all rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import DeviceDesc, IntDType
from .errors import InfeasibleError, ValidationError
from .kernel import KernelIO, Tiling, make_tiling, native_tiling, pack_slice, run_kernel, unpack_slice
from .perf import estimate_scaling

BLOB_ALIGN = 32


@dataclass(frozen=True)
class CascadeConfig:
    cas_len: int
    cas_num: int
    f_in_slice: int
    f_out_slice: int
    padded_f_in: int
    padded_f_out: int
    rows: int = 1
    padded_rows: int = 4
    batch_tile: int = 4

    def __post_init__(self):
        if self.cas_len < 1 or self.cas_num < 1:
            raise ValidationError("cas_len and cas_num must be >= 1")
        if self.padded_f_in != self.cas_len * self.f_in_slice:
            raise ValidationError("padded_f_in must equal cas_len * f_in_slice")
        if self.padded_f_out != self.cas_num * self.f_out_slice:
            raise ValidationError("padded_f_out must equal cas_num * f_out_slice")

    @property
    def tiles(self) -> int:
        return self.cas_len * self.cas_num

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("cas_len", "cas_num", "f_in_slice", "f_out_slice",
                                              "padded_f_in", "padded_f_out", "rows", "padded_rows",
                                              "batch_tile")}

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def slice_size(f: int, parts: int, block: int) -> int:
    """Smallest per-part extent, a multiple of ``block``, with parts*extent >= f."""
    return block * math.ceil(f / (parts * block))


def _round_up(x: int, m: int) -> int:
    return -(-x // m) * m


def _aligned(nbytes: int) -> int:
    return _round_up(nbytes, BLOB_ALIGN)


def tile_memory_bytes(cfg: CascadeConfig, t: Tiling, dtypes, use_bias: bool, batch_tile: int) -> int:
    """Local data memory one tile needs: weights, bias, and ping-pong I/O buffers."""
    act, wgt, acc, out = dtypes
    w = _aligned(cfg.f_in_slice * cfg.f_out_slice * wgt.nbytes)
    b = _aligned(cfg.f_out_slice * acc.nbytes) if use_bias else 0
    a_buf = 2 * _aligned(batch_tile * cfg.f_in_slice * act.nbytes)
    o_buf = 2 * _aligned(batch_tile * cfg.f_out_slice * out.nbytes)
    return w + b + a_buf + o_buf


def make_config(rows: int, f_in: int, f_out: int, cas_len: int, cas_num: int, t: Tiling,
                dtypes, device: DeviceDesc, use_bias: bool = False,
                f_in_slice: int | None = None, f_out_slice: int | None = None) -> CascadeConfig | None:
    """Slices, padding and batch chunk for one rectangle; None if it cannot fit
    a tile's local memory."""
    fis = f_in_slice or slice_size(f_in, cas_len, t.k)
    fos = f_out_slice or slice_size(f_out, cas_num, t.n)
    prow = _round_up(rows, t.m)
    base = CascadeConfig(cas_len, cas_num, fis, fos, cas_len * fis, cas_num * fos, rows, prow, t.m)
    bt = prow
    while bt >= t.m:
        if tile_memory_bytes(base, t, dtypes, use_bias, bt) <= device.local_mem_bytes:
            return CascadeConfig(cas_len, cas_num, fis, fos, cas_len * fis, cas_num * fos, rows, prow, bt)
        bt = _round_up(bt // 2, t.m) if bt > t.m else 0
    return None


def resolve_layer(node, device: DeviceDesc, budget: int) -> tuple[CascadeConfig, Tiling]:
    """Pick tiling and (cas_len, cas_num) for a linear node within ``budget`` tiles.

    Tiling: the node's pinned tiling, else the device's native one for the
    dtype pair.  Rectangle: the one with the shortest steady-state interval;
    ties go to fewer memory-tile ports (cas_len + cas_num), then smaller
    cas_num, then smaller cas_len.  A rectangle whose last column or row
    would hold nothing but padding is skipped.
    """
    act, wgt = node.dtypes["act"], node.dtypes["wgt"]
    dtypes = (act, wgt, node.dtypes["acc"], node.dtypes["out"])
    ov = node.override_values
    if "tiling" in ov:
        t = make_tiling(ov["tiling"], act, wgt, device)
    else:
        t = native_tiling(act, wgt, device)
    rows, f_in, f_out = node.rows, node.f_in, node.f_out

    if "cascade" in ov:
        c = ov["cascade"]
        c = dict(c) if isinstance(c, dict) else {"cas_len": c[0], "cas_num": c[1]}
        cfg = make_config(rows, f_in, f_out, int(c["cas_len"]), int(c["cas_num"]), t, dtypes, device,
                          node.fused_bias, c.get("f_in_slice"), c.get("f_out_slice"))
        if cfg is None:
            raise InfeasibleError(f"{node.id}: pinned cascade {c} does not fit local memory")
        if cfg.padded_f_in < f_in or cfg.padded_f_out < f_out:
            raise ValidationError(f"{node.id}: pinned cascade {c} does not cover the layer")
        return cfg, t

    best = None
    max_len = min(device.cols, math.ceil(f_in / t.k), budget)
    max_num = min(device.rows, math.ceil(f_out / t.n), budget)
    for L in range(1, max_len + 1):
        for N in range(1, max_num + 1):
            if L * N > budget:
                break
            cfg = make_config(rows, f_in, f_out, L, N, t, dtypes, device, node.fused_bias)
            if cfg is None:
                continue
            if (L - 1) * cfg.f_in_slice >= f_in or (N - 1) * cfg.f_out_slice >= f_out:
                continue
            est = estimate_scaling(cfg, t, dtypes, device, use_bias=node.fused_bias)
            key = (est.interval_cycles, L + N, N, L)
            if best is None or key < best[0]:
                best = (key, cfg)
    if best is None:
        raise InfeasibleError(f"{node.id}: no cascade configuration fits within {budget} tile(s) "
                              f"and {device.local_mem_bytes} B local memory")
    return best[1], t


def min_tiles(node, device: DeviceDesc) -> int:
    """Fewest tiles any valid rectangle for ``node`` needs (local memory is
    the only thing that forces more than one)."""
    if "cascade" in node.override_values:
        cfg, _ = resolve_layer(node, device, device.tiles)
        return cfg.tiles
    for area in range(1, device.tiles + 1):
        try:
            resolve_layer(node, device, area)
            return area
        except InfeasibleError:
            continue
    raise InfeasibleError(f"{node.id}: does not fit the device even using all {device.tiles} tiles")


@dataclass
class PackedWeights:
    """Per-tile weight blobs keyed by (cascade position i, cascade row j), and
    per-row bias vectors (loaded by the head tile of that row)."""

    blobs: dict[tuple[int, int], np.ndarray]
    biases: dict[int, np.ndarray]
    wgt_dtype: IntDType
    acc_dtype: IntDType
    f_in_slice: int
    f_out_slice: int

    def blob_bytes(self, key) -> int:
        return self.blobs[key].size * self.wgt_dtype.nbytes

    def summary(self) -> str:
        n = len(self.blobs)
        total = sum(self.blob_bytes(k) for k in self.blobs)
        return f"{n} tile blob(s), {total} B weights, {len(self.biases)} bias vector(s)"


def pack_weights(w: np.ndarray, bias, cfg: CascadeConfig, t: Tiling, wgt_dtype: IntDType,
                 acc_dtype: IntDType, device: DeviceDesc | None = None) -> PackedWeights:
    """Split an out x in weight matrix over the rectangle in kernel load order.

    Each blob is zero-padded to whole tiles and then to a 32-byte multiple.
    """
    w = np.asarray(w, dtype=np.int64)
    f_out, f_in = w.shape
    wt = np.zeros((cfg.padded_f_in, cfg.padded_f_out), dtype=np.int64)
    wt[:f_in, :f_out] = w.T
    per_elem = wgt_dtype.nbytes
    blobs = {}
    for j in range(cfg.cas_num):
        for i in range(cfg.cas_len):
            sl = wt[i * cfg.f_in_slice:(i + 1) * cfg.f_in_slice, j * cfg.f_out_slice:(j + 1) * cfg.f_out_slice]
            blob = pack_slice(sl, t)
            pad = (-blob.size * per_elem) % BLOB_ALIGN // per_elem
            if pad:
                blob = np.concatenate([blob, np.zeros(pad, dtype=np.int64)])
            if device is not None and blob.size * per_elem > device.local_mem_bytes:
                raise InfeasibleError(f"weight blob for tile ({i},{j}) is {blob.size * per_elem} B, "
                                      f"local memory {device.local_mem_bytes} B")
            blobs[(i, j)] = blob
    biases = {}
    if bias is not None:
        b = np.zeros(cfg.padded_f_out, dtype=np.int64)
        b[:f_out] = bias
        for j in range(cfg.cas_num):
            biases[j] = b[j * cfg.f_out_slice:(j + 1) * cfg.f_out_slice].copy()
    return PackedWeights(blobs, biases, wgt_dtype, acc_dtype, cfg.f_in_slice, cfg.f_out_slice)


def unpack_weights(packed: PackedWeights, cfg: CascadeConfig, t: Tiling, f_in: int, f_out: int):
    """Inverse of :func:`pack_weights`: (out x in weights, bias or None)."""
    wt = np.zeros((cfg.padded_f_in, cfg.padded_f_out), dtype=np.int64)
    for (i, j), blob in packed.blobs.items():
        wt[i * cfg.f_in_slice:(i + 1) * cfg.f_in_slice, j * cfg.f_out_slice:(j + 1) * cfg.f_out_slice] = \
            unpack_slice(blob, cfg.f_in_slice, cfg.f_out_slice, t)
    bias = None
    if packed.biases:
        bias = np.concatenate([packed.biases[j] for j in range(cfg.cas_num)])[:f_out]
    return wt[:f_in, :f_out].T.copy(), bias


@dataclass
class KernelInstance:
    i: int
    j: int
    role: str


@dataclass
class LayerSubgraph:
    kernels: list[KernelInstance]
    cascade_edges: list[tuple[tuple[int, int], tuple[int, int]]]
    broadcast_ports: list[int]
    output_ports: list[int]
    meta: dict = field(default_factory=dict)


def cascade_role(i: int, cas_len: int) -> str:
    if cas_len == 1:
        return "solo"
    return "head" if i == 0 else "tail" if i == cas_len - 1 else "middle"


def layer_graph(node, cfg: CascadeConfig) -> LayerSubgraph:
    kernels = [KernelInstance(i, j, cascade_role(i, cfg.cas_len))
               for j in range(cfg.cas_num) for i in range(cfg.cas_len)]
    edges = [((i, j), (i + 1, j)) for j in range(cfg.cas_num) for i in range(cfg.cas_len - 1)]
    return LayerSubgraph(kernels, edges, list(range(cfg.cas_len)), list(range(cfg.cas_num)),
                         meta={"node": getattr(node, "id", None)})


def run_rectangle(col_inputs: list[np.ndarray], cfg: CascadeConfig, t: Tiling, packed: PackedWeights,
                  dtypes, shift: int, use_bias: bool, use_relu: bool, rounding: str = "half_even",
                  on_kernel=None) -> list[np.ndarray]:
    """Run every kernel of the rectangle.

    ``col_inputs[i]`` is the padded_rows x f_in_slice matrix broadcast up
    column ``i``.  Rows are processed in ``batch_tile`` chunks; within a
    cascade row kernels run west to east.  Returns one padded_rows x
    f_out_slice output matrix per cascade row.
    """
    act, wgt, acc, out = dtypes
    outs = [np.zeros((cfg.padded_rows, cfg.f_out_slice), dtype=np.int64) for _ in range(cfg.cas_num)]
    for r0 in range(0, cfg.padded_rows, cfg.batch_tile):
        r1 = min(r0 + cfg.batch_tile, cfg.padded_rows)
        for j in range(cfg.cas_num):
            partial = None
            for i in range(cfg.cas_len):
                role = cascade_role(i, cfg.cas_len)
                io = KernelIO(a=col_inputs[i][r0:r1], w=packed.blobs[(i, j)], f_out=cfg.f_out_slice,
                              act_dtype=act, wgt_dtype=wgt, acc_dtype=acc, out_dtype=out,
                              bias=packed.biases.get(j) if use_bias else None, cascade_in=partial)
                res = run_kernel(io, t, shift, use_bias=use_bias, use_relu=use_relu,
                                 cascade_role=role, rounding=rounding)
                if on_kernel is not None:
                    on_kernel(i, j, r0, role)
                partial = res if role in ("head", "middle") else None
                if role in ("solo", "tail"):
                    outs[j][r0:r1] = res
    return outs


def simulate_layer(x: np.ndarray, cfg: CascadeConfig, t: Tiling, packed: PackedWeights, dtypes,
                   shift: int, use_bias: bool, use_relu: bool, f_out: int,
                   rounding: str = "half_even") -> np.ndarray:
    """Layer output for a rows x f_in input, computed through the rectangle
    (zero padding in, cropping out)."""
    x = np.asarray(x, dtype=np.int64)
    rows, f_in = x.shape
    xp = np.zeros((cfg.padded_rows, cfg.padded_f_in), dtype=np.int64)
    xp[:rows, :f_in] = x
    cols = [xp[:, i * cfg.f_in_slice:(i + 1) * cfg.f_in_slice] for i in range(cfg.cas_len)]
    outs = run_rectangle(cols, cfg, t, packed, dtypes, shift, use_bias, use_relu, rounding)
    return np.concatenate(outs, axis=1)[:rows, :f_out]


def monolithic_layer(x: np.ndarray, w: np.ndarray, bias, t: Tiling, dtypes, shift: int,
                     use_bias: bool, use_relu: bool, rounding: str = "half_even") -> np.ndarray:
    """Same layer on a single solo kernel holding the whole (padded) weight matrix."""
    x = np.asarray(x, dtype=np.int64)
    rows, f_in = x.shape
    f_out = w.shape[0]
    cfg = CascadeConfig(1, 1, _round_up(f_in, t.k), _round_up(f_out, t.n), _round_up(f_in, t.k),
                        _round_up(f_out, t.n), rows, _round_up(rows, t.m), _round_up(rows, t.m))
    packed = pack_weights(w, bias, cfg, t, dtypes[1], dtypes[2])
    return simulate_layer(x, cfg, t, packed, dtypes, shift, use_bias, use_relu, f_out, rounding)
