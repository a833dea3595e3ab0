import pytest

from aiemap.device import IntDType
from aiemap.kernel import blocked_schedule_trace, make_tiling, native_tiling
from aiemap.perf import (
    ceiling, emulation_penalty, estimate_kernel, estimate_scaling, kernel_cycles, memory_bound, peak_compute,
    pipeline_interval,
)
from aiemap.scaling import make_config

I8, I16, I32, I64 = IntDType.i8, IntDType.i16, IntDType.i32, IntDType.i64
PAIRS = {"i8xi8": (I8, I8, I32, I8), "i16xi8": (I16, I8, I32, I8), "i16xi16": (I16, I16, I64, I16)}


@pytest.mark.parametrize("pair,w,gmacs,gops", [
    ("i8xi8", 256, 320, 640), ("i16xi8", 128, 160, 320), ("i16xi16", 64, 80, 160),
])
def test_peak_compute(device, pair, w, gmacs, gops):
    dt = PAIRS[pair]
    assert device.macs(dt[0], dt[1]) == w
    assert peak_compute(dt, device) == (gmacs, gops)


def test_memory_bound(device):
    assert memory_bound(PAIRS["i8xi8"], 1, device) == 32
    assert memory_bound(PAIRS["i16xi16"], 1, device) == 16
    for m in (1, 4, 64, 10**6):
        assert ceiling(PAIRS["i8xi8"], m, device, m) <= 256
    assert ceiling(PAIRS["i8xi8"], 10**6, device, 10**6) == 256
    with pytest.raises(ValueError):
        memory_bound(PAIRS["i8xi8"], 0, device)


def test_large_batch_is_compute_bound(device):
    dt = PAIRS["i8xi8"]
    t = native_tiling(I8, I8)
    est = estimate_kernel(blocked_schedule_trace(t, (256, 128, 128)), t, dt, device)
    assert est.bound_kind == "compute"
    assert 0.9 * 256 < est.macs_per_cycle <= 256


def test_gemv_is_memory_bound(device):
    dt = PAIRS["i8xi8"]
    t = native_tiling(I8, I8)
    est = estimate_kernel(blocked_schedule_trace(t, (4, 128, 128)), t, dt, device, useful_macs=128 * 128)
    assert est.bound_kind == "memory"
    assert est.macs_per_cycle <= memory_bound(dt, 1, device, 128)


def test_trace_and_closed_form_agree(device):
    for pair, dims in [("i8xi8", (12, 64, 40)), ("i16xi8", (8, 32, 24)), ("i16xi16", (20, 16, 12))]:
        dt = PAIRS[pair]
        t = native_tiling(dt[0], dt[1])
        for bias in (False, True):
            a = estimate_kernel(blocked_schedule_trace(t, dims, bias), t, dt, device)
            b = kernel_cycles(t, dims, dt, device, use_bias=bias)
            assert a.est_cycles == b.est_cycles


def test_emulation_penalty(device):
    dt = PAIRS["i8xi8"]
    assert emulation_penalty(native_tiling(I8, I8), dt, device) == 1
    assert emulation_penalty(make_tiling((8, 8, 8), I8, I8), dt, device) > 1


def _scaling(device, L, N, rows=1024, s=128, pair="i8xi8"):
    dt = PAIRS[pair]
    t = native_tiling(dt[0], dt[1])
    cfg = make_config(rows, s * L, s * N, L, N, t, dt, device)
    return estimate_scaling(cfg, t, dt, device)


def test_one_tile_is_the_baseline(device):
    e = _scaling(device, 1, 1)
    assert e.efficiency == pytest.approx(1.0)


def test_cascade_fill_costs_a_little(device):
    e = _scaling(device, 4, 1)
    assert 0.9 <= e.efficiency < 1.0
    assert e.fill_cycles > 0


def test_ideal_is_tiles_times_single(device):
    e = _scaling(device, 37, 8, pair="i16xi8")
    assert e.tiles == 296
    assert e.ideal_gops == pytest.approx(296 * e.single_tile.gops)


def test_pipeline_interval(device):
    a = _scaling(device, 1, 1)
    p = pipeline_interval([a, a, a], 1024)
    assert p.interval_cycles == a.interval_cycles
    slow = _scaling(device, 1, 1, rows=4096)
    p = pipeline_interval([a, slow, a], 1024)
    assert p.interval_cycles == slow.interval_cycles and p.bottleneck == 1
    with pytest.raises(ValueError):
        pipeline_interval([], 1)
