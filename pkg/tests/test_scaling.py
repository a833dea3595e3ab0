import numpy as np
import pytest
from conftest import ref_dense

from aiemap.device import IntDType
from aiemap.errors import InfeasibleError
from aiemap.frontend import dense_model
from aiemap.ir import lower
from aiemap.kernel import native_tiling, pack_slice
from aiemap.scaling import (
    layer_graph, make_config, min_tiles, monolithic_layer, pack_weights, resolve_layer, simulate_layer,
    slice_size, unpack_weights,
)

I8, I16, I32, I64 = IntDType.i8, IntDType.i16, IntDType.i32, IntDType.i64
DT8 = (I8, I8, I32, I8)


def _node(device, rows, fin, fout, rng, **kw):
    return lower(dense_model("m", rows, [fin, fout], rng, **kw), device).linear_nodes[0]


def test_resolve_single_tile(device, rng):
    cfg, t = resolve_layer(_node(device, 8, 128, 128, rng), device, 1)
    assert (cfg.cas_len, cfg.cas_num, t.shape) == (1, 1, (4, 8, 8))


def test_resolve_4x4_for_512(device, rng):
    cfg, t = resolve_layer(_node(device, 8, 512, 512, rng), device, 16)
    assert (cfg.cas_len, cfg.cas_num, cfg.f_in_slice, cfg.f_out_slice) == (4, 4, 128, 128)


def test_resolve_respects_budget(device, rng):
    n = _node(device, 8, 512, 512, rng)
    for budget in (6, 9, 12, 20):
        cfg, _ = resolve_layer(n, device, budget)
        assert cfg.tiles <= budget


def test_resolve_infeasible_budget(device, rng):
    with pytest.raises(InfeasibleError):
        resolve_layer(_node(device, 8, 512, 512, rng), device, 1)


def test_slice_padding_rule(device):
    t = native_tiling(I8, I8)
    assert slice_size(100, 2, 8) == 56
    cfg = make_config(4, 100, 8, 2, 1, t, DT8, device)
    assert (cfg.f_in_slice, cfg.padded_f_in) == (56, 112)
    # smallest slice that is a multiple of K and covers f_in, by brute force
    assert min(s for s in range(8, 200, 8) if 2 * s >= 100) == 56


def test_min_tiles(device, rng):
    assert min_tiles(_node(device, 8, 128, 128, rng), device) == 1
    n = _node(device, 8, 512, 512, rng)
    k = min_tiles(n, device)
    resolve_layer(n, device, k)
    with pytest.raises(InfeasibleError):
        resolve_layer(n, device, k - 1)


def test_pack_identity_single_tile(device):
    t = native_tiling(I8, I8)
    cfg = make_config(4, 8, 8, 1, 1, t, DT8, device)
    pk = pack_weights(np.eye(8, dtype=np.int64), None, cfg, t, I8, I32)
    blob = pk.blobs[(0, 0)]
    assert np.array_equal(blob[:64], pack_slice(np.eye(8, dtype=np.int64), t))
    assert blob.size == 64


def test_pack_unpack_round_trip(device, rng):
    t = native_tiling(I16, I8)
    w = rng.integers(-128, 128, (50, 70))
    b = rng.integers(-1000, 1000, 50)
    cfg = make_config(8, 70, 50, 3, 2, t, (I16, I8, I32, I8), device)
    pk = pack_weights(w, b, cfg, t, I8, I32)
    w2, b2 = unpack_weights(pk, cfg, t, 70, 50)
    assert np.array_equal(w, w2) and np.array_equal(b, b2)
    assert all(v.size % 32 == 0 for v in pk.blobs.values())


def test_layer_graph_counts(device, rng):
    n = _node(device, 8, 64, 64, rng)
    t = native_tiling(I8, I8)
    g = layer_graph(n, make_config(8, 64, 64, 1, 1, t, DT8, device))
    assert [k.role for k in g.kernels] == ["solo"] and g.cascade_edges == []
    g = layer_graph(n, make_config(8, 64, 64, 4, 4, t, DT8, device))
    assert len(g.kernels) == 16 and len(g.cascade_edges) == 12
    assert len(g.broadcast_ports) == 4 and len(g.output_ports) == 4
    assert [k.role for k in g.kernels[:4]] == ["head", "middle", "middle", "tail"]


@pytest.mark.parametrize("L,N", [(1, 1), (2, 1), (1, 3), (3, 2), (4, 4)])
def test_rectangle_equals_monolithic(device, rng, L, N):
    t = native_tiling(I8, I8)
    rows, fin, fout = 6, 37, 29
    x = rng.integers(-128, 128, (rows, fin))
    w = rng.integers(-128, 128, (fout, fin))
    b = rng.integers(-5000, 5000, fout)
    cfg = make_config(rows, fin, fout, L, N, t, DT8, device, use_bias=True)
    pk = pack_weights(w, b, cfg, t, I8, I32)
    got = simulate_layer(x, cfg, t, pk, DT8, 7, True, True, fout)
    mono = monolithic_layer(x, w, b, t, DT8, 7, True, True)
    assert np.array_equal(got, mono)
    assert np.array_equal(got, ref_dense(x, w, b, "i32", "i8", 7, True))
