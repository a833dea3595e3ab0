"""Analytical performance model.

Single-tile ceilings, a load-bandwidth roofline, cycle estimates derived from
the blocked kernel's event trace, array-level scaling and multi-layer
pipeline interval.  None of this is calibrated against hardware; it is a
model that is exact about its own formulas and nothing more.

Stage costs per event (cycles):

* VLDA:  ceil(M*K*bytes_a / port)    port = load_bytes_per_cycle / 2
* VLDB:  ceil(K*N*bytes_w / port)
* BIAS_LOAD: ceil(N*bytes_acc / port), issued on the A port
* VMAC:  ceil(M*K*N / W) for native tilings; non-native tilings pay
  ``calls + 1`` where ``calls`` native intrinsics cover the tile and the
  extra cycle stands for the data shuffling emulation needs
* VST:   ceil(M*N*bytes_out / store port)

A group of the 2x2 scheme costs the max over its four stage sums; groups run
back to back.  The prologue is the first VLDA+VLDB (nothing to overlap with
yet), the epilogue the last group's stores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .device import DeviceDesc, IntDType
from .kernel import Tiling, emulation_calls, native_tiling


@dataclass
class PerfEstimate:
    macs_per_cycle_bound: float
    mem_bound_macs_per_cycle: float
    est_cycles: int
    macs: int
    gops: float
    efficiency: float
    bound_kind: str
    clock_ghz: float
    stage_cycles: dict = field(default_factory=dict)

    @property
    def macs_per_cycle(self) -> float:
        return self.macs / self.est_cycles

    @property
    def seconds(self) -> float:
        return self.est_cycles / (self.clock_ghz * 1e9)


def peak_compute(dtypes, device: DeviceDesc) -> tuple[float, float]:
    """(GMAC/s, GOP/s) of one tile for an (act, wgt) pair."""
    w = device.macs(*dtypes[:2])
    gmacs = w * device.clock_ghz
    return gmacs, 2 * gmacs


def memory_bound(dtypes, batch_reuse: int, device: DeviceDesc, out_reuse: int = 1) -> float:
    """Load-bandwidth ceiling in MAC/cycle.

    Each activation element loaded is reused by ``out_reuse`` output columns
    and each weight element by ``batch_reuse`` rows, so one "unit" of
    ``batch_reuse * out_reuse`` MACs per K step needs
    ``batch_reuse*bytes_a + out_reuse*bytes_w`` bytes::

        ceiling = load_bytes_per_cycle * m * n / (m * bytes_a + n * bytes_w)

    m = n = 1 is plain GEMV with no reuse.  The 2x2 blocked kernel with tiling
    <M,K,N> corresponds to m = 2M, n = 2N.
    """
    if batch_reuse < 1 or out_reuse < 1:
        raise ValueError("reuse factors must be >= 1")
    a, w = dtypes[0], dtypes[1]
    m, n = batch_reuse, out_reuse
    return device.load_bytes_per_cycle * m * n / (m * a.nbytes + n * w.nbytes)


def ceiling(dtypes, batch_reuse: int, device: DeviceDesc, out_reuse: int = 1) -> float:
    return min(device.macs(*dtypes[:2]), memory_bound(dtypes, batch_reuse, device, out_reuse))


def _stage_costs(t: Tiling, dtypes, device: DeviceDesc) -> dict[str, int]:
    act, wgt = dtypes[0], dtypes[1]
    out = dtypes[3] if len(dtypes) > 3 else act
    acc = dtypes[2] if len(dtypes) > 2 else IntDType.i32
    port = device.load_port_bytes
    w = device.macs(act, wgt)
    if t.native:
        vmac = math.ceil(t.m * t.k * t.n / w)
    else:
        nat = native_tiling(act, wgt, device)
        vmac = emulation_calls(t, nat) * math.ceil(nat.m * nat.k * nat.n / w) + 1
    return {
        "VLDA": math.ceil(t.m * t.k * act.nbytes / port),
        "VLDB": math.ceil(t.k * t.n * wgt.nbytes / port),
        "BIAS_LOAD": math.ceil(t.n * acc.nbytes / port),
        "VMAC": vmac,
        "VST": math.ceil(t.m * t.n * out.nbytes / device.store_bytes_per_cycle),
    }


def emulation_penalty(t: Tiling, dtypes, device: DeviceDesc) -> float:
    """VMAC cycles per tile relative to the ideal ``M*K*N / W``."""
    w = device.macs(dtypes[0], dtypes[1])
    return _stage_costs(t, dtypes, device)["VMAC"] / (t.m * t.k * t.n / w)


def _group_cycles(counts: dict[str, int], cost: dict[str, int]):
    a = counts.get("VLDA", 0) * cost["VLDA"] + counts.get("BIAS_LOAD", 0) * cost["BIAS_LOAD"]
    b = counts.get("VLDB", 0) * cost["VLDB"]
    mac = counts.get("VMAC", 0) * cost["VMAC"]
    st = counts.get("VST", 0) * cost["VST"]
    return max(a, b, mac, st), a, b, mac, st


def _finish(t: Tiling, dtypes, device, groups, useful_macs, prologue, epilogue) -> PerfEstimate:
    total = prologue + epilogue
    mac_total = load_total = st_total = 0
    for g in groups:
        c, a, b, mac, st = g
        total += c
        mac_total += mac
        load_total += max(a, b)
        st_total += st
    w = device.macs(dtypes[0], dtypes[1])
    mem = memory_bound(dtypes, 2 * t.m, device, 2 * t.n)
    bound = "compute" if mac_total >= max(load_total, st_total) else "memory"
    gops = 2 * useful_macs * device.clock_ghz / total
    return PerfEstimate(
        macs_per_cycle_bound=float(w),
        mem_bound_macs_per_cycle=mem,
        est_cycles=total,
        macs=useful_macs,
        gops=gops,
        efficiency=(useful_macs / total) / w,
        bound_kind=bound,
        clock_ghz=device.clock_ghz,
        stage_cycles={"VMAC": mac_total, "LOAD": load_total, "VST": st_total,
                      "prologue": prologue, "epilogue": epilogue},
    )


def estimate_kernel(trace, t: Tiling, dtypes, device: DeviceDesc, useful_macs: int | None = None) -> PerfEstimate:
    """Cycle estimate of one kernel invocation from its event trace.

    ``dtypes`` is (act, wgt[, acc, out]).  ``useful_macs`` defaults to every
    MAC the trace issues; pass the unpadded count to see padding losses.
    """
    cost = _stage_costs(t, dtypes, device)
    per_group: dict[int, dict[str, int]] = {}
    for ev in trace:
        c = per_group.setdefault(ev.group, {})
        c[ev.op] = c.get(ev.op, 0) + 1
    groups = [_group_cycles(per_group[g], cost) for g in sorted(per_group)]
    if useful_macs is None:
        useful_macs = sum(c.get("VMAC", 0) for c in per_group.values()) * t.m * t.k * t.n
    prologue = cost["VLDA"] + cost["VLDB"] if groups else 0
    epilogue = per_group[max(per_group)].get("VST", 0) * cost["VST"] if groups else 0
    return _finish(t, dtypes, device, groups, useful_macs, prologue, epilogue)


def kernel_cycles(t: Tiling, dims, dtypes, device: DeviceDesc, use_bias: bool = False,
                  useful_macs: int | None = None) -> PerfEstimate:
    """Same result as ``estimate_kernel(blocked_schedule_trace(...))`` without
    materialising the trace; groups are counted by shape class."""
    rows, f_in, f_out = dims
    mt, kt, nt = rows // t.m, f_in // t.k, f_out // t.n
    cost = _stage_costs(t, dtypes, device)
    groups = []
    for gr, nr in ((2, mt // 2), (1, mt % 2)):
        for gc, nc in ((2, nt // 2), (1, nt % 2)):
            if nr and nc:
                counts = {"VLDA": gr * kt, "VLDB": gc * kt, "VMAC": gr * gc * kt, "VST": gr * gc,
                          "BIAS_LOAD": gc if use_bias else 0}
                groups.extend([_group_cycles(counts, cost)] * (nr * nc))
    if useful_macs is None:
        useful_macs = rows * f_in * f_out
    last_r = 2 if mt % 2 == 0 else 1
    last_c = 2 if nt % 2 == 0 else 1
    prologue = cost["VLDA"] + cost["VLDB"] if groups else 0
    epilogue = last_r * last_c * cost["VST"] if groups else 0
    return _finish(t, dtypes, device, groups, useful_macs, prologue, epilogue)


@dataclass
class ScalingEstimate:
    tiles: int
    single_tile: PerfEstimate
    ideal_gops: float
    modeled_gops: float
    efficiency: float
    interval_cycles: int
    latency_cycles: int
    fill_cycles: int
    stream_in_cycles: int
    stream_out_cycles: int
    useful_macs: int
    bound_kind: str
    clock_ghz: float

    @property
    def interval_s(self) -> float:
        return self.interval_cycles / (self.clock_ghz * 1e9)

    @property
    def latency_s(self) -> float:
        return self.latency_cycles / (self.clock_ghz * 1e9)


def estimate_scaling(cfg, t: Tiling, dtypes, device: DeviceDesc, use_bias: bool = False,
                     useful_macs: int | None = None) -> ScalingEstimate:
    """Array-level estimate of a layer spread over cas_len x cas_num tiles.

    Every tile runs the same slice problem, in chunks of ``cfg.batch_tile``
    rows.  The ideal is ``tiles`` times that single-tile throughput.  The
    modelled time adds the cascade fill, ``cas_len - 1`` extra groups before
    the tail of a row produces anything, and is floored by the memory-tile
    streams: one broadcast input stream per column and one output stream per
    row, each at ``stream_bytes_per_cycle``.  The steady-state interval under
    ping-pong buffering excludes the fill, which overlaps with the previous
    invocation.
    """
    act, wgt, acc, out = dtypes
    tile_cycles = 0
    tile_macs = 0
    group = 0
    rows_left = cfg.padded_rows
    first = True
    while rows_left > 0:
        chunk = min(cfg.batch_tile, rows_left)
        est = kernel_cycles(t, (chunk, cfg.f_in_slice, cfg.f_out_slice), dtypes, device, use_bias=use_bias)
        tile_cycles += est.est_cycles if first else est.est_cycles - est.stage_cycles["prologue"]
        tile_macs += est.macs
        if first:
            c = _stage_costs(t, dtypes, device)
            gr = 2 if chunk // t.m >= 2 else 1
            gc = 2 if cfg.f_out_slice // t.n >= 2 else 1
            kt = cfg.f_in_slice // t.k
            group = _group_cycles({"VLDA": gr * kt, "VLDB": gc * kt, "VMAC": gr * gc * kt, "VST": gr * gc}, c)[0]
        first = False
        rows_left -= chunk
    w = device.macs(act, wgt)
    single = PerfEstimate(
        macs_per_cycle_bound=float(w),
        mem_bound_macs_per_cycle=memory_bound(dtypes, 2 * t.m, device, 2 * t.n),
        est_cycles=tile_cycles, macs=tile_macs,
        gops=2 * tile_macs * device.clock_ghz / tile_cycles,
        efficiency=tile_macs / tile_cycles / w,
        bound_kind="compute", clock_ghz=device.clock_ghz,
    )
    tiles = cfg.cas_len * cfg.cas_num
    fill = (cfg.cas_len - 1) * group
    s_in = math.ceil(cfg.padded_rows * cfg.f_in_slice * act.nbytes / device.stream_bytes_per_cycle)
    s_out = math.ceil(cfg.padded_rows * cfg.f_out_slice * out.nbytes / device.stream_bytes_per_cycle)
    interval = max(tile_cycles, s_in, s_out)
    latency = max(tile_cycles + fill, s_in, s_out)
    if useful_macs is None:
        useful_macs = tiles * tile_macs
    ideal = tiles * single.gops
    modeled = 2 * useful_macs * device.clock_ghz / latency
    return ScalingEstimate(
        tiles=tiles, single_tile=single, ideal_gops=ideal, modeled_gops=modeled,
        efficiency=modeled / ideal, interval_cycles=interval, latency_cycles=latency,
        fill_cycles=fill, stream_in_cycles=s_in, stream_out_cycles=s_out,
        useful_macs=useful_macs,
        bound_kind="stream" if max(s_in, s_out) > tile_cycles else "compute",
        clock_ghz=device.clock_ghz,
    )


@dataclass
class PipelineEstimate:
    interval_cycles: int
    interval_s_per_sample: float
    latency_s: float
    tops: float
    bottleneck: int


def pipeline_interval(layers: list[ScalingEstimate], samples: int) -> PipelineEstimate:
    """Steady-state output interval of a chain of layers with ping-pong
    buffers between them: the slowest layer sets the pace."""
    if not layers:
        raise ValueError("need at least one layer")
    clock = layers[0].clock_ghz * 1e9
    worst = max(range(len(layers)), key=lambda i: (layers[i].interval_cycles, -i))
    interval = layers[worst].interval_cycles
    latency = sum(l.latency_cycles for l in layers)
    ops = 2 * sum(l.useful_macs for l in layers)
    return PipelineEstimate(
        interval_cycles=interval,
        interval_s_per_sample=interval / clock / samples,
        latency_s=latency / clock,
        tops=ops / (interval / clock) / 1e12,
        bottleneck=worst,
    )
