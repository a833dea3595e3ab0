"""Independent oracles shared by the test suite.

Nothing here calls into the arithmetic of the package under test: rounding
uses exact rationals, accumulation uses Python ints, and tiler addresses come
from explicit nested loops.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from aiemap.device import default_aieml_device
from aiemap.placement import Block

BITS = {"i8": 8, "i16": 16, "i32": 32, "i64": 64}


def ref_range(name: str) -> tuple[int, int]:
    b = BITS[name]
    return -(1 << (b - 1)), (1 << (b - 1)) - 1


def ref_wrap(v: int, name: str) -> int:
    b = BITS[name]
    return (v + (1 << (b - 1))) % (1 << b) - (1 << (b - 1))


def ref_srs(v: int, shift: int, out: str, relu: bool = False, rounding: str = "half_even") -> int:
    q = Fraction(int(v), 1 << shift)
    if rounding == "half_even":
        r = round(q)                      # Fraction rounds half to even
    elif rounding == "half_up":
        r = int((q + Fraction(1, 2)).__floor__())
    else:
        r = int(q.__floor__())
    if relu:
        r = max(r, 0)
    lo, hi = ref_range(out)
    return min(max(r, lo), hi)


def ref_dense(x, w, bias, acc: str, out: str, shift: int, relu: bool, rounding: str = "half_even"):
    """Unbounded-precision matmul, then wrap to the accumulator, then SRS."""
    x = [[int(v) for v in row] for row in np.asarray(x)]
    w = [[int(v) for v in row] for row in np.asarray(w)]
    res = []
    for row in x:
        line = []
        for j, wr in enumerate(w):
            a = sum(xi * wi for xi, wi in zip(row, wr))
            if bias is not None:
                a += int(bias[j])
            line.append(ref_srs(ref_wrap(a, acc), shift, out, relu, rounding))
        res.append(line)
    return np.array(res, dtype=np.int64).reshape(len(x), len(w))


def ref_reshape(x: np.ndarray, spec: dict) -> np.ndarray:
    """Reshape layers by explicit index mapping."""
    if "mixer" not in spec:
        return np.asarray(x).reshape(spec["shape"])
    b, t, c = spec["btc"]
    flat = np.asarray(x).reshape(-1)
    if spec["mixer"] == "token":
        # source (b, t, c) -> rows (b, c), cols t
        out = np.zeros((b * c, t), dtype=np.int64)
        for bi, ti, ci in itertools.product(range(b), range(t), range(c)):
            out[bi * c + ci, ti] = flat[(bi * t + ti) * c + ci]
    else:
        # source (b, c, t) -> rows (b, t), cols c
        out = np.zeros((b * t, c), dtype=np.int64)
        for bi, ti, ci in itertools.product(range(b), range(t), range(c)):
            out[bi * t + ti, ci] = flat[(bi * c + ci) * t + ti]
    return out


def reference_forward(model, x) -> np.ndarray:
    """Layer-by-layer reference interpreter of a QuantModel."""
    cur = np.asarray(x, dtype=np.int64)
    for layer in model.layers:
        if layer.kind == "reshape":
            cur = ref_reshape(cur, layer.reshape_spec)
            continue
        cur = ref_dense(cur.reshape(-1, cur.shape[-1]), layer.weights, layer.bias if layer.use_bias else None,
                        layer.acc_dtype.name, layer.out_dtype.name, layer.shift, layer.use_relu)
    return cur


def ref_tiler_coords(buffer_dims, tile_dims, traversal, offset=None):
    """Coordinates in stream order from explicit nested loops (outermost first)."""
    nd = len(buffer_dims)
    offset = list(offset or [0] * nd)
    out = []

    def walk(level, origin):
        if level == len(traversal):
            for inner in itertools.product(*[range(d) for d in tile_dims]):
                out.append(tuple(o + i for o, i in zip(origin, inner)))
            return
        dim, stride, wrap = traversal[level]
        for s in range(wrap):
            o = list(origin)
            o[dim] += s * stride
            walk(level + 1, o)

    walk(0, offset)
    return out


def ref_tiler_read(arr: np.ndarray, buffer_dims, tile_dims, traversal, offset=None) -> list[int]:
    res = []
    for c in ref_tiler_coords(buffer_dims, tile_dims, traversal, offset):
        inside = all(0 <= ci < d for ci, d in zip(c, buffer_dims))
        res.append(int(arr[c]) if inside else 0)
    return res


# a 38x8 instance with layer rectangles of mixed shapes
FIG3_BLOCKS = [
    Block("g0", 4, 4), Block("g1", 8, 4), Block("g2", 6, 3), Block("g3", 8, 4),
    Block("g4", 6, 2), Block("g5", 4, 4), Block("g6", 8, 4), Block("g7", 2, 2),
]


@pytest.fixture
def device():
    return default_aieml_device()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
