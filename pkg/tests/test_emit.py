import json
import os
from pathlib import Path

import numpy as np
import pytest

from aiemap import UserConfig, compile_model, load_plan, simulate
from aiemap.emit import emit, plan_solution, render_sources
from aiemap.frontend import dense_model
from aiemap.placement import place_bnb, render_ascii
from aiemap.plan import PLAN_FORMAT

GOLDEN = Path(__file__).parent / "golden"


def _golden_plan(device):
    m = dense_model("golden", 4, [32, 16, 8], np.random.default_rng(0))
    return compile_model(m, device, UserConfig(layers={"fc0": {"cascade": [2, 2]}}))


def test_sources_match_golden_files(device):
    files = render_sources(_golden_plan(device))
    if os.environ.get("AIEMAP_UPDATE_GOLDEN"):
        GOLDEN.mkdir(exist_ok=True)
        for name, text in files.items():
            (GOLDEN / name).write_text(text)
    assert sorted(files) == sorted(p.name for p in GOLDEN.iterdir())
    for name, text in files.items():
        assert text == (GOLDEN / name).read_text(), name


def test_emit_writes_everything(device, tmp_path):
    plan = _golden_plan(device)
    written = {p.relative_to(tmp_path).as_posix() for p in emit(plan, tmp_path)}
    assert {"plan.json", "weights.bin", "report.txt", "report.json", "placement.txt", "placement.svg",
            "src/graph.h", "src/fc0_params.h", "src/fc1_params.h"} <= written
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["format"] == PLAN_FORMAT and doc["version"] == 1
    assert "J=" in (tmp_path / "placement.txt").read_text()
    assert not {p.name for p in (tmp_path / "src").iterdir()} - {"graph.h", "fc0_params.h", "fc1_params.h"}


def test_no_sources_flag(device, tmp_path):
    emit(_golden_plan(device), tmp_path, sources=False)
    assert not (tmp_path / "src").exists()


def test_compile_twice_gives_identical_bytes(device, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit(_golden_plan(device), a)
    emit(_golden_plan(device), b)
    for name in ("plan.json", "weights.bin", "src/graph.h", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_reloaded_plan_simulates_identically(device, tmp_path, rng):
    plan = _golden_plan(device)
    emit(plan, tmp_path)
    again = load_plan((tmp_path / "plan.json").read_bytes(), (tmp_path / "weights.bin").read_bytes())
    assert again.dumps() == plan.dumps()
    x = rng.integers(-128, 128, plan.input_shape)
    for mode in ("fast", "checked"):
        assert np.array_equal(simulate(plan, x, mode).outputs, simulate(again, x, mode).outputs)


def test_corrupt_blob_is_rejected(device):
    from aiemap.errors import ValidationError
    plan_bytes, blob = _golden_plan(device).dumps()
    with pytest.raises(ValidationError):
        load_plan(plan_bytes, blob[:-8])
    doc = json.loads(plan_bytes)
    doc["version"] = 99
    with pytest.raises(ValidationError):
        load_plan(json.dumps(doc), blob)


def test_placement_rendering_of_full_array():
    from conftest import FIG3_BLOCKS
    sol = place_bnb(FIG3_BLOCKS, (38, 8), node_limit=200_000)
    lines = render_ascii(sol, (38, 8)).splitlines()
    grid = [l for l in lines if l[:2].strip().isdigit()]
    assert len(grid) == 8 and all(len(l) == 3 + 38 for l in grid)
    body = "".join(l[3:] for l in grid)
    for i in range(len(FIG3_BLOCKS)):
        b = FIG3_BLOCKS[i]
        assert body.count(str(i)) == b.width * b.height


def test_plan_solution_round_trip(device):
    plan = _golden_plan(device)
    sol = plan_solution(plan)
    assert [tuple(a) for a in sol.anchors] == [l.anchor for l in plan.layers]
