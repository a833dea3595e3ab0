"""Bit-exact execution of a compiled plan.

``fast`` mode evaluates each layer directly (integer matmul, wrap to the
accumulator, SRS).  ``checked`` mode replays the plan the way the array would
run it: tilers write and read memory-tile banks, reads are broadcast up tile
columns, kernels run per tile with cascade partial sums, and online checks
guard against double-booked tiles, same-phase bank conflicts and memory-tile
capacity overflow.  The two modes must agree bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .device import dtype_range
from .errors import InvariantViolation, ValidationError
from .fixedpoint import quantize_float, srs_array, wrap_array
from .frontend import apply_reshape
from .memtile import MemTileBuffer, blocks_to_matrix, broadcast_read, matrix_to_blocks, tiler_read, tiler_write
from .plan import BufferPlan, CompiledPlan, LayerPlan
from .scaling import PackedWeights, run_rectangle, unpack_weights

MODES = ("fast", "checked")


@dataclass
class InferenceResult:
    outputs: np.ndarray
    activations: list[np.ndarray] = field(default_factory=list)
    mode: str = "fast"


def quantize_io(x, plan: CompiledPlan) -> np.ndarray:
    """Float inputs to the first layer's integer type (half-even, saturate)."""
    return quantize_float(x, plan.input_dtype, plan.input_shift)


def dequantize_io(y, plan: CompiledPlan) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * 2.0 ** (-plan.output_frac_bits())


def _check_inputs(plan: CompiledPlan, x) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValidationError(f"inputs must be integers, got {x.dtype}")
    if list(x.shape) != list(plan.input_shape):
        raise ValidationError(f"inputs have shape {list(x.shape)}, plan expects {list(plan.input_shape)}")
    lo, hi = dtype_range(plan.input_dtype)
    x = x.astype(np.int64)
    if x.size and (x.min() < lo or x.max() > hi):
        raise ValidationError(f"inputs outside {plan.input_dtype.name} range")
    return x


def _as_2d(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x


def layer_fast(layer: LayerPlan, x: np.ndarray, rounding: str) -> np.ndarray:
    act, wgt, acc, out = layer.dtype_tuple
    w, bias = unpack_weights(layer.packed, layer.cascade, layer.tiling, layer.f_in, layer.f_out)
    a = x @ w.T
    if layer.use_bias:
        a = a + bias
    a = wrap_array(a, acc)
    return srs_array(a, layer.shift, out, relu=layer.use_relu, rounding=rounding)


def _run_fast(plan: CompiledPlan, x: np.ndarray, keep: bool) -> InferenceResult:
    acts = []
    cur = _as_2d(x)
    for layer in plan.layers:
        if layer.relayout_in is not None:
            cur = apply_reshape(cur, layer.relayout_in)
        cur = layer_fast(layer, cur, plan.rounding)
        if keep:
            acts.append(cur.copy())
    if plan.output_relayout is not None:
        cur = apply_reshape(cur, plan.output_relayout)
    return InferenceResult(cur, acts, "fast")


class _Checker:
    """Online invariants of checked mode."""

    def __init__(self, plan: CompiledPlan):
        self.plan = plan
        self.owner: dict[tuple[int, int], str] = {}
        dev = plan.device
        for layer in plan.layers:
            for c, r in layer.tiles():
                if not (0 <= c < dev.cols and 0 <= r < dev.rows):
                    raise InvariantViolation(f"layer {layer.id}: tile ({c},{r}) outside the {dev.cols}x{dev.rows} array")
                if (c, r) in self.owner:
                    raise InvariantViolation(
                        f"tile ({c},{r}) double-booked by {self.owner[(c, r)]} and {layer.id}")
                self.owner[(c, r)] = layer.id
        used = [0] * dev.memtile_count
        for b in plan.buffers:
            share = math.ceil(b.nbytes / b.span)
            if b.column < 0 or b.column + b.span > dev.memtile_count:
                raise InvariantViolation(f"buffer {b.id}: memory tiles {b.columns()} outside 0..{dev.memtile_count - 1}")
            for c in b.columns():
                used[c] += share
        for c, u in enumerate(used):
            if u > dev.memtile_capacity_bytes:
                raise InvariantViolation(f"memory tile ({c},-1) holds {u} B, capacity {dev.memtile_capacity_bytes} B")
        self.memtile_bytes = used

    def kernel_ran(self, layer: LayerPlan, i: int, j: int):
        c, r = layer.anchor[0] + i, layer.anchor[1] + j
        if self.owner.get((c, r)) != layer.id:
            raise InvariantViolation(f"layer {layer.id} ran a kernel on tile ({c},{r}) it does not own")

    def buffer_allocated(self, buf: MemTileBuffer, plan_buf: BufferPlan):
        if buf.nbytes != plan_buf.nbytes:
            raise InvariantViolation(f"buffer {plan_buf.id}: allocated {buf.nbytes} B, plan says {plan_buf.nbytes} B")


def _read_columns(mem: MemTileBuffer, bp: BufferPlan, layer: LayerPlan) -> list[np.ndarray]:
    """Broadcast each column's read stream and turn it back into matrices."""
    cfg, t = layer.cascade, layer.tiling
    bank = mem.read_bank
    src = mem
    if bp.relayout is not None:
        # the relayout is a logical view of the stored bank
        mem.record(bank, "read", "relayout")
        src = apply_reshape(mem.banks[bank], bp.relayout)
    cols = []
    for i, rt in enumerate(bp.read):
        streams = broadcast_read(src, rt, bp.fanout, bank=bank) if src is mem else \
            [tiler_read(src, rt) for _ in range(bp.fanout)]
        first = streams[0]
        for s in streams[1:]:
            if not np.array_equal(s, first):
                raise InvariantViolation(f"buffer {bp.id}: broadcast to column {i} diverged")
        cols.append(blocks_to_matrix(first, cfg.padded_rows, cfg.f_in_slice, t.m, t.k))
    return cols


def _write_rows(mem: MemTileBuffer, bp: BufferPlan, layer: LayerPlan, outs: list[np.ndarray]):
    t = layer.tiling
    for j, wt in enumerate(bp.write):
        tiler_write(mem, wt, matrix_to_blocks(outs[j], t.m, t.n), port=f"row{j}")


def _run_checked(plan: CompiledPlan, x: np.ndarray, keep: bool, workers: int) -> InferenceResult:
    check = _Checker(plan)
    by_consumer = {b.consumer: b for b in plan.buffers}
    by_producer = {b.producer: b for b in plan.buffers}
    mems = {}
    for b in plan.buffers:
        mems[b.id] = MemTileBuffer(b.dims, b.storage, name=b.id)
        check.buffer_allocated(mems[b.id], b)

    # host writes the input buffer, then hands it over
    bp_in = by_producer["input"]
    mem = mems[bp_in.id]
    tiler_write(mem, bp_in.write[0], _as_2d(x).reshape(-1), port="host")
    mem.swap()

    acts = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for layer in plan.layers:
            bp_in = by_consumer[layer.id]
            bp_out = by_producer[layer.id]
            cols = _read_columns(mems[bp_in.id], bp_in, layer)

            def on_kernel(i, j, r0, role, layer=layer):
                check.kernel_ran(layer, i, j)

            outs = _rectangle(layer, cols, plan.rounding, on_kernel, pool)
            out_mem = mems[bp_out.id]
            _write_rows(out_mem, bp_out, layer, outs)
            out_mem.swap()
            if keep:
                acts.append(out_mem.banks[out_mem.read_bank].copy())
    finally:
        if pool is not None:
            pool.shutdown()

    bp_out = by_consumer["output"]
    mem = mems[bp_out.id]
    y = tiler_read(mem, bp_out.read[0], port="host").reshape(bp_out.view_dims)
    if plan.output_relayout is not None:
        y = apply_reshape(y, plan.output_relayout)
    for m in mems.values():
        m.verify_phases()
    return InferenceResult(y, acts, "checked")


def _rectangle(layer: LayerPlan, cols, rounding, on_kernel, pool):
    """Run a layer's tiles.  Cascade rows are independent, so with a pool
    they run concurrently; each row still goes west to east."""
    cfg = layer.cascade
    args = (layer.tiling, layer.packed, layer.dtype_tuple, layer.shift, layer.use_bias, layer.use_relu, rounding)
    if pool is None or cfg.cas_num == 1:
        return run_rectangle(cols, cfg, *args, on_kernel=on_kernel)
    def one_row(j):
        sub = replace(cfg, cas_num=1, padded_f_out=cfg.f_out_slice)
        pk = layer.packed
        packed = PackedWeights({(i, 0): pk.blobs[(i, j)] for i in range(cfg.cas_len)},
                               {0: pk.biases[j]} if j in pk.biases else {}, pk.wgt_dtype, pk.acc_dtype,
                               pk.f_in_slice, pk.f_out_slice)
        a = (layer.tiling, packed) + args[2:]
        return run_rectangle(cols, sub, *a, on_kernel=lambda i, _j, r0, role: on_kernel(i, j, r0, role))[0]

    return list(pool.map(one_row, range(cfg.cas_num)))


def simulate(plan: CompiledPlan, inputs, mode: str = "fast", keep_activations: bool = False,
             workers: int = 1) -> InferenceResult:
    """Run ``inputs`` (integer tensor of the plan's input shape) through the plan."""
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    x = _check_inputs(plan, inputs)
    if mode == "fast":
        return _run_fast(plan, x, keep_activations)
    return _run_checked(plan, x, keep_activations, workers)
