"""Write a compiled plan to disk.

Output directory layout::

    plan.json           canonical plan (see aiemap.plan)
    weights.bin         little-endian weight/bias blob
    report.txt          human-readable performance report
    report.json         the same, machine-readable
    placement.txt       ASCII grid of the layer rectangles
    placement.svg       the same as SVG
    src/graph.h         top-level graph rendered from a template
    src/<layer>_params.h  per-layer constants

The rendered sources are text only; nothing here invokes a vendor toolchain.
"""

from __future__ import annotations

from pathlib import Path

import jinja2

from .placement import Block, PlacementSolution, render_ascii, render_svg
from .plan import CompiledPlan
from .report import build_report, format_report, report_json

CTYPES = {"i8": "int8", "i16": "int16", "i32": "int32", "i64": "int64"}

_env = jinja2.Environment(
    loader=jinja2.PackageLoader("aiemap", "templates"),
    undefined=jinja2.StrictUndefined,
    keep_trailing_newline=True,
    autoescape=False,
)


def plan_solution(plan: CompiledPlan) -> PlacementSolution:
    """Rebuild the PlacementSolution recorded in a plan (for rendering)."""
    p = plan.placement
    blocks = [Block(l.id, *p["blocks"][l.id]) for l in plan.layers]
    anchors = [tuple(p["anchors"][l.id]) for l in plan.layers]
    return PlacementSolution(anchors, p["cost"], True, p["optimal"], p["method"], blocks=blocks)


def render_sources(plan: CompiledPlan, namespace: str = "aiemap_gen") -> dict[str, str]:
    ctx = {"plan": plan, "ns": namespace, "ctype": CTYPES}
    files = {"graph.h": _env.get_template("graph.h.j2").render(**ctx)}
    tpl = _env.get_template("layer_params.h.j2")
    for layer in plan.layers:
        files[f"{layer.id}_params.h"] = tpl.render(layer=layer, **ctx)
    return files


def emit(plan: CompiledPlan, out_dir, sources: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan_bytes, blob = plan.dumps()
    rep = build_report(plan)
    sol = plan_solution(plan)
    grid = (plan.device.cols, plan.device.rows)
    files = {
        "plan.json": plan_bytes,
        "weights.bin": blob,
        "report.txt": format_report(rep).encode(),
        "report.json": report_json(rep).encode(),
        "placement.txt": render_ascii(sol, grid).encode(),
        "placement.svg": render_svg(sol, grid).encode(),
    }
    if sources:
        for name, text in render_sources(plan).items():
            files[f"src/{name}"] = text.encode()
    written = []
    for name, data in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        written.append(path)
    return written
