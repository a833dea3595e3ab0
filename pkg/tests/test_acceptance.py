"""Acceptance criteria 1-9, one test each.

Every test records a PASS/FAIL line (with its runtime against the limit);
the lines are printed in the "acceptance criteria" section of the pytest
terminal summary.
"""

import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest
from conftest import ACCEPTANCE_RESULTS, FIG3_BLOCKS, ref_tiler_coords, reference_forward

from aiemap import UserConfig, compile_model, default_aieml_device, simulate
from aiemap.device import IntDType
from aiemap.frontend import dense_model
from aiemap.kernel import SUPPORTED_TILINGS, KernelIO, make_tiling, pack_slice, run_kernel
from aiemap.memtile import DmaTiler, MemTileBuffer, has_overlap, plan_retile, tiler_read, tiler_write
from aiemap.perf import memory_bound, peak_compute
from aiemap.placement import Block, place_bnb, place_exhaustive, place_greedy
from aiemap.errors import InfeasibleError
from aiemap.scaling import make_config, monolithic_layer, pack_weights, simulate_layer

I8, I16, I32, I64 = IntDType.i8, IntDType.i16, IntDType.i32, IntDType.i64
PATHS = {"i8xi8": (I8, I8, I32, I8), "i16xi8": (I16, I8, I32, I16), "i16xi16": (I16, I16, I64, I16)}


@contextmanager
def criterion(n: int, title: str, limit_s: float):
    info = {"detail": ""}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        dt = time.perf_counter() - t0
        status = "PASS" if ok and dt < limit_s else "FAIL"
        ACCEPTANCE_RESULTS.append(
            f"{status} criterion {n}: {title} [{info['detail']}] {dt:.2f}s (limit {limit_s:g}s)")
    assert dt < limit_s, f"criterion {n} took {dt:.1f}s, limit {limit_s}s"


# vectorised oracle over Python ints (object arrays) ---------------------------

def _obj(x):
    return np.asarray(x, dtype=np.int64).astype(object)


def _wrap_obj(v, bits):
    half, mod = 1 << (bits - 1), 1 << bits
    return (v + half) % mod - half


def _srs_obj(v, shift, bits, relu):
    if shift:
        d = 1 << shift
        q = v // d
        twice = 2 * (v - q * d)
        up = np.vectorize(lambda t, qq: int(t > d or (t == d and qq % 2 == 1)), otypes=[object])(twice, q)
        v = q + up
    if relu:
        v = np.where(v < 0, 0, v)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return np.where(v < lo, lo, np.where(v > hi, hi, v)).astype(object)


def _extreme(rng, lo, hi, size):
    """Values concentrated at and near the type limits, plus uniform ones."""
    pick = rng.integers(0, 4, size)
    edge = np.where(rng.integers(0, 2, size) == 1, hi - rng.integers(0, 3, size), lo + rng.integers(0, 3, size))
    return np.where(pick == 0, edge, rng.integers(lo, hi + 1, size))


# 1 ---------------------------------------------------------------------------

def test_criterion_1_table1_ceilings():
    with criterion(1, "single-tile ceilings (MAC/cyc, GMAC/s, GOP/s)", 1.0) as c:
        dev = default_aieml_device()
        expected = {"i8xi8": (256, 320, 640), "i16xi8": (128, 160, 320), "i16xi16": (64, 80, 160)}
        got = {}
        for key, dt in PATHS.items():
            gmacs, gops = peak_compute(dt, dev)
            got[key] = (dev.macs(dt[0], dt[1]), gmacs, gops)
        assert got == expected
        c["detail"] = ", ".join(f"{k} {v[0]}/{v[1]:g}/{v[2]:g}" for k, v in got.items())


# 2 ---------------------------------------------------------------------------

def test_criterion_2_gemv_memory_bound():
    with criterion(2, "i8xi8 no-reuse memory bound", 1.0) as c:
        v = memory_bound(PATHS["i8xi8"], 1, default_aieml_device())
        assert v == 32
        c["detail"] = f"{v:g} MAC/cycle"


# 3 ---------------------------------------------------------------------------

def _kernel_case(rng, dt):
    act, wgt, acc, out = dt
    t = make_tiling(sorted(SUPPORTED_TILINGS[(act, wgt)])[rng.integers(len(SUPPORTED_TILINGS[(act, wgt)]))], act, wgt)
    rows = t.m * int(rng.integers(1, 64 // t.m + 1))
    f_in = t.k * int(rng.integers(1, 64 // t.k + 1))
    f_out = t.n * int(rng.integers(1, 64 // t.n + 1))
    alo, ahi = -(1 << (act.bits - 1)), (1 << (act.bits - 1)) - 1
    wlo, whi = -(1 << (wgt.bits - 1)), (1 << (wgt.bits - 1)) - 1
    a = _extreme(rng, alo, ahi, (rows, f_in))
    w = _extreme(rng, wlo, whi, (f_in, f_out))
    blo, bhi = -(1 << (acc.bits - 1)), (1 << (acc.bits - 1)) - 1
    near = rng.integers(0, 3)
    if near == 0:   # bias at the accumulator limits forces wrap-around
        bias = np.where(rng.integers(0, 2, f_out) == 1, bhi - rng.integers(0, 1 << 20, f_out),
                        blo + rng.integers(0, 1 << 20, f_out))
    else:
        bias = rng.integers(-(1 << 24), 1 << 24, f_out)
    shift = int(rng.integers(0, 9))
    use_bias, use_relu = bool(rng.integers(2)), bool(rng.integers(2))

    io = KernelIO(a=a, w=pack_slice(w, t), f_out=f_out, act_dtype=act, wgt_dtype=wgt, acc_dtype=acc,
                  out_dtype=out, bias=bias if use_bias else None)
    got = run_kernel(io, t, shift, use_bias=use_bias, use_relu=use_relu)

    # |a|,|w| <= 2**15 and f_in <= 64 keep every int64 dot product below 2**36: exact
    prod = _obj(a @ w)
    if use_bias:
        prod = prod + _obj(bias)[None, :]
    expected = _srs_obj(_wrap_obj(prod, acc.bits), shift, out.bits, use_relu)
    return np.array_equal(got.astype(object), expected), int(np.sum((expected == 127) | (expected == -128)))


def test_criterion_3_kernel_bit_exact():
    with criterion(3, "run_kernel vs unbounded->wrap->srs oracle", 30.0) as c:
        rng = np.random.default_rng(3)
        counts = {}
        sat = 0
        for key, dt in PATHS.items():
            bad = 0
            for _ in range(1000):
                ok, s = _kernel_case(rng, dt)
                bad += not ok
                sat += s
            counts[key] = bad
        assert all(v == 0 for v in counts.values()), counts
        assert sat > 0
        c["detail"] = "1000 cases per path, mismatches " + ", ".join(f"{k}={v}" for k, v in counts.items())


# 4 ---------------------------------------------------------------------------

def test_criterion_4_cascade_equivalence():
    with criterion(4, "cascade rectangle == monolithic kernel", 60.0) as c:
        rng = np.random.default_rng(4)
        dev = default_aieml_device()
        n = bad = 0
        while n < 200:
            dt = list(PATHS.values())[n % 3]
            act, wgt, acc, out = dt
            t = make_tiling(sorted(SUPPORTED_TILINGS[(act, wgt)])[rng.integers(12)], act, wgt)
            L, N = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            rows, f_in, f_out = int(rng.integers(1, 17)), int(rng.integers(1, 97)), int(rng.integers(1, 97))
            cfg = make_config(rows, f_in, f_out, L, N, t, dt, dev, use_bias=True)
            if cfg is None:
                continue
            alo, ahi = -(1 << (act.bits - 1)), (1 << (act.bits - 1)) - 1
            wlo, whi = -(1 << (wgt.bits - 1)), (1 << (wgt.bits - 1)) - 1
            x = _extreme(rng, alo, ahi, (rows, f_in))
            w = _extreme(rng, wlo, whi, (f_out, f_in))
            b = rng.integers(-(1 << 20), 1 << 20, f_out)
            shift, relu = int(rng.integers(0, 12)), bool(rng.integers(2))
            pk = pack_weights(w, b, cfg, t, wgt, acc)
            got = simulate_layer(x, cfg, t, pk, dt, shift, True, relu, f_out)
            mono = monolithic_layer(x, w, b, t, dt, shift, True, relu)
            bad += not np.array_equal(got, mono)
            n += 1
        assert bad == 0
        c["detail"] = f"{n} random layers up to 4x4, mismatches {bad}"


# 5 ---------------------------------------------------------------------------

def _tiler_case(rng):
    nd = int(rng.integers(1, 4))
    dims = tuple(int(rng.integers(1, 33)) for _ in range(nd))
    tile = tuple(int(rng.integers(1, min(d, 8) + 3)) for d in dims)
    trav = []
    budget = 4096 // int(np.prod(tile))
    for _ in range(int(rng.integers(0, 4))):
        dim = int(rng.integers(nd))
        wrap = int(rng.integers(1, max(2, min(budget, 8)) + 1))
        if wrap > budget:
            break
        budget //= wrap
        stride = int(rng.choice([tile[dim], tile[dim], rng.integers(0, dims[dim] + 2)]))
        trav.append((dim, stride, wrap))
    off = tuple(int(rng.integers(-2, 3)) if rng.integers(4) == 0 else 0 for _ in range(nd))
    return DmaTiler(dims, tile, tuple(trav), offset=off)


def test_criterion_5_tiler():
    with criterion(5, "tiler read/write vs nested-loop address oracle", 30.0) as c:
        rng = np.random.default_rng(5)
        oob = trips = 0
        for _ in range(500):
            t = _tiler_case(rng)
            buf = rng.integers(-1000, 1000, t.buffer_dims)
            coords = ref_tiler_coords(t.buffer_dims, t.tile_dims, t.traversal, t.offset)
            inside = [all(0 <= ci < d for ci, d in zip(co, t.buffer_dims)) for co in coords]
            expected = [int(buf[co]) if ins else 0 for co, ins in zip(coords, inside)]
            got = tiler_read(buf, t)
            assert got.tolist() == expected
            oob += sum(not i for i in inside)
            assert all(got[i] == 0 for i, ins in enumerate(inside) if not ins)
            if not has_overlap(t):
                stream = rng.integers(-128, 128, t.n_elements)
                written = tiler_write(np.zeros(t.buffer_dims, dtype=np.int64), t, stream)
                back = tiler_read(written, t)
                assert np.array_equal(back, np.where(inside, stream, 0))
                trips += 1
        assert oob > 0 and trips > 100
        c["detail"] = f"500 plans, {trips} round trips, {oob} out-of-bounds reads all zero"


# 6 ---------------------------------------------------------------------------

def _reblock(x, bm, bn):
    """Stream of a matrix in bm x bn blocks (zero padded), by explicit loops."""
    r, f = x.shape
    out = []
    for i0 in range(0, -(-r // bm) * bm, bm):
        for j0 in range(0, -(-f // bn) * bn, bn):
            for i, j in itertools.product(range(i0, i0 + bm), range(j0, j0 + bn)):
                out.append(int(x[i, j]) if i < r and j < f else 0)
    return out


def test_criterion_6_retile():
    with criterion(6, "plan_retile write/read == direct re-blocking", 30.0) as c:
        rng = np.random.default_rng(6)
        mixed = 0
        for k in range(300):
            pm, pn = int(rng.choice([1, 2, 4, 8])), int(rng.choice([4, 8, 16]))
            cm, ck = int(rng.choice([1, 2, 4, 8])), int(rng.choice([4, 8, 16]))
            rows, feats = int(rng.integers(1, 33)), int(rng.integers(1, 97))
            p_dt, c_dt = [(I8, I8), (I8, I16), (I16, I16)][k % 3]
            mixed += p_dt != c_dt
            x = rng.integers(-(1 << (p_dt.bits - 1)), 1 << (p_dt.bits - 1), (rows, feats))
            w, r = plan_retile((pm, pn), (cm, ck), (rows, feats), (p_dt, c_dt))
            assert (w.elem_dtype, r.elem_dtype) == (p_dt, c_dt)
            mem = MemTileBuffer((rows, feats), c_dt)
            tiler_write(mem, w, _reblock(x, pm, pn))
            mem.swap()
            assert tiler_read(mem, r).tolist() == _reblock(x, cm, ck)
        c["detail"] = f"300 producer/consumer pairs, {mixed} mixed-precision"


# 7 ---------------------------------------------------------------------------

def test_criterion_7_placement():
    with criterion(7, "B&B == exhaustive (50 instances); B&B <= greedy on 38x8", 60.0) as c:
        rng = np.random.default_rng(7)
        n = 0
        while n < 50:
            cols, rows = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            blocks = [Block(f"g{i}", int(rng.integers(1, min(cols, 4) + 1)), int(rng.integers(1, min(rows, 4) + 1)))
                      for i in range(int(rng.integers(1, 5)))]
            lam, mu = float(rng.choice([0.5, 1.0, 3.0])), float(rng.choice([0.0, 0.05, 0.4]))
            try:
                ex = place_exhaustive(blocks, (cols, rows), lam, mu)
            except InfeasibleError:
                continue
            sol = place_bnb(blocks, (cols, rows), lam, mu)
            assert sol.cost == pytest.approx(ex.cost, abs=1e-9)
            n += 1
        dev = default_aieml_device()
        bnb = place_bnb(FIG3_BLOCKS, dev, 1.0, 0.05, (0, 0), node_limit=200_000)
        right = place_greedy(FIG3_BLOCKS, dev, "right", (0, 0), 1.0, 0.05)
        up = place_greedy(FIG3_BLOCKS, dev, "up", (0, 0), 1.0, 0.05)
        assert bnb.cost <= right.cost and bnb.cost <= up.cost
        c["detail"] = (f"50/50 optimal; 38x8: J(bnb)={bnb.cost:.2f} J(right)={right.cost:.2f} "
                       f"J(up)={up.cost:.2f}")


# 8 / 9 ------------------------------------------------------------------------

def _mixed_mlp():
    dts = [("i16", "i16", "i16"), ("i16", "i8", "i8"), ("i8", "i8", "i8")]
    return dense_model("mixed3", 8, [64, 48, 32, 10], np.random.default_rng(80), dtypes=dts, shift=9)


def _mlp7():
    return dense_model("mlp7", 1, [512] * 8, np.random.default_rng(81), shift=12)


def test_criterion_8_end_to_end():
    with criterion(8, "compile+simulate == reference interpreter, fast == checked", 120.0) as c:
        dev = default_aieml_device()
        rng = np.random.default_rng(8)
        for m in (_mixed_mlp(), _mlp7()):
            plan = compile_model(m, dev)
            act = m.layers[0].act_dtype
            lo, hi = -(1 << (act.bits - 1)), 1 << (act.bits - 1)
            for _ in range(20):
                x = rng.integers(lo, hi, plan.input_shape)
                ref = reference_forward(m, x)
                fast = simulate(plan, x, "fast").outputs
                checked = simulate(plan, x, "checked").outputs
                assert np.array_equal(fast, ref)
                assert np.array_equal(checked, fast)
        c["detail"] = "mixed 3-layer and 7x512 MLP, 20 batches each"


def test_criterion_9_determinism():
    with criterion(9, "byte-identical plans; checked mode independent of workers", 60.0) as c:
        dev = default_aieml_device()
        rng = np.random.default_rng(9)
        for make in (_mixed_mlp, _mlp7):
            a = compile_model(make(), dev).dumps()
            b = compile_model(make(), dev).dumps()
            assert a == b
        cfg = UserConfig(layers={"fc0": {"cascade": [4, 4]}})
        plan = compile_model(_mlp7(), dev, cfg)
        x = rng.integers(-128, 128, plan.input_shape)
        outs = [simulate(plan, x, "checked", workers=w).outputs for w in (1, 1, 4, 8)]
        assert all(np.array_equal(o, outs[0]) for o in outs)
        c["detail"] = "2 models compiled twice; checked runs with 1/1/4/8 workers"
