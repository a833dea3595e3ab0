"""Compile a 7-layer 512-wide int8 MLP, emit it, reload it and run it.

    python demos/mlp_end_to_end.py [out_dir]

The emitted directory can be fed back to the CLI:
    aiemap simulate OUT --inputs OUT/inputs.json --mode checked
    aiemap report OUT
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

from aiemap import UserConfig, compile_model, default_aieml_device, load_plan, simulate
from aiemap.emit import emit
from aiemap.frontend import serialize_model, dense_model
from aiemap.report import build_report, format_report


def main(out_dir="demo_mlp7"):
    out = Path(out_dir)
    rng = np.random.default_rng(2024)
    model = dense_model("mlp7", 1, [512] * 8, rng, shift=12)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_bytes(serialize_model(model))

    t0 = time.perf_counter()
    plan = compile_model(model, default_aieml_device())
    print(f"compiled {len(plan.layers)} layers in {time.perf_counter() - t0:.2f}s")
    for l in plan.layers:
        print(f"  {l.id}: tiling {l.tiling}, cascade {l.cascade.cas_len}x{l.cascade.cas_num} at {l.anchor}")

    emit(plan, out)
    again = load_plan((out / "plan.json").read_bytes(), (out / "weights.bin").read_bytes())

    x = rng.integers(-128, 128, plan.input_shape)
    (out / "inputs.json").write_text(json.dumps(x.tolist()))
    fast = simulate(plan, x, "fast").outputs
    checked = simulate(again, x, "checked", workers=4).outputs
    print("fast == checked (reloaded plan):", np.array_equal(fast, checked))
    print("first outputs:", fast[0, :8].tolist())
    print()
    print(format_report(build_report(plan)))
    print(f"plan written to {out}/")

    # the default budget gives each layer its smallest rectangle; spreading
    # the layers over the whole array with a larger batch raises throughput
    wide = dense_model("mlp7_b128", 128, [512] * 8, np.random.default_rng(2024), shift=12)
    p = build_report(compile_model(wide, default_aieml_device(), UserConfig(tile_fraction=1.0)))["pipeline"]
    print(f"batch 128, tile_fraction 1.0: {p['tiles_used']} tiles, {p['tops']} TOPS modeled")


if __name__ == "__main__":
    main(*sys.argv[1:2])
