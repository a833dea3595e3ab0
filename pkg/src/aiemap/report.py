"""Performance report for a compiled plan.

Every estimate here comes from :mod:`aiemap.perf`.  The "measured" columns
are reference values obtained on AIE-ML hardware; they are printed next to
the model's estimate for manual comparison only, since nothing in this
package can reproduce a hardware measurement.
"""

from __future__ import annotations

import json

from .device import DeviceDesc, IntDType
from .kernel import native_tiling
from .perf import estimate_scaling, kernel_cycles, peak_compute, pipeline_interval
from .plan import CompiledPlan
from .scaling import make_config

# (label, act, wgt, acc, out, f_in, f_out, measured base GOPS, measured +bias+relu GOPS)
MEASURED_KERNELS = (
    ("i8 x i8 128x128", "i8", "i8", "i32", "i8", 128, 128, 613.0, 520.0),
    ("i16 x i8 128x128", "i16", "i8", "i32", "i8", 128, 128, 314.0, 287.0),
    ("i16 x i16 64x64", "i16", "i16", "i64", "i16", 64, 64, 138.0, 114.0),
)
MEASURED_SCALING = {"i8xi8": 0.973, "i16xi8": 0.986, "i16xi16": 0.971}
MEASURED_MLP7 = {"tops": 113.4, "interval_us": 0.03}
KERNEL_BATCH = 128     # rows used for the single-kernel model estimates
SCALING_BATCH = 1024   # rows and per-tile slice used for the scaling estimate
SCALING_SLICE = 128


def layer_rows(plan: CompiledPlan) -> list[dict]:
    dev = plan.device
    out = []
    for l in plan.layers:
        dt = l.dtype_tuple
        macs = l.rows * l.f_in * l.f_out
        est = estimate_scaling(l.cascade, l.tiling, dt, dev, use_bias=l.use_bias, useful_macs=macs)
        _, peak_gops = peak_compute(dt, dev)
        out.append({
            "layer": l.id,
            "dtypes": f"{dt[0].name}x{dt[1].name}->{dt[3].name}",
            "tiling": str(l.tiling),
            "cascade": [l.cascade.cas_len, l.cascade.cas_num],
            "tiles": est.tiles,
            "anchor": list(l.anchor),
            "macs": macs,
            "gops": round(est.modeled_gops, 3),
            "ideal_gops": round(est.ideal_gops, 3),
            "efficiency_vs_peak": round(est.modeled_gops / (est.tiles * peak_gops), 4),
            "scaling_efficiency": round(est.efficiency, 4),
            "bound_kind": est.bound_kind,
            "interval_cycles": est.interval_cycles,
            "latency_cycles": est.latency_cycles,
            "interval_us": round(est.interval_s * 1e6, 6),
            "latency_us": round(est.latency_s * 1e6, 6),
            "_est": est,
        })
    return out


def kernel_reference(device: DeviceDesc) -> list[dict]:
    """Single-kernel model estimates next to the board measurements."""
    rows = []
    for label, a, w, acc, o, fi, fo, base, fused in MEASURED_KERNELS:
        dt = tuple(IntDType.parse(x) for x in (a, w, acc, o))
        if not device.supports(dt[0], dt[1]):
            continue
        t = native_tiling(dt[0], dt[1], device)
        plain = kernel_cycles(t, (KERNEL_BATCH, fi, fo), dt, device)
        biased = kernel_cycles(t, (KERNEL_BATCH, fi, fo), dt, device, use_bias=True)
        _, peak = peak_compute(dt, device)
        rows.append({"workload": label, "tiling": str(t), "peak_gops": peak,
                     "model_gops": round(plain.gops, 1), "model_bias_relu_gops": round(biased.gops, 1),
                     "measured_gops": base, "measured_bias_relu_gops": fused})
    return rows


def scaling_reference(device: DeviceDesc) -> list[dict]:
    """Model efficiency of one layer spread over a full-height rectangle of
    296 tiles (37 x 8) against one tile with the same per-tile slice, next to
    the measured values.  Input size grows with the tile count."""
    rows = []
    for key, eff in MEASURED_SCALING.items():
        a, w = key.split("x")
        act, wgt = IntDType.parse(a), IntDType.parse(w)
        if not device.supports(act, wgt):
            continue
        acc = IntDType.i64 if (act, wgt) == (IntDType.i16, IntDType.i16) else IntDType.i32
        out = IntDType.i16 if acc is IntDType.i64 else IntDType.i8
        dt = (act, wgt, acc, out)
        t = native_tiling(act, wgt, device)
        L, N = min(37, device.cols), min(8, device.rows)
        s = SCALING_SLICE
        cfg = make_config(SCALING_BATCH, s * L, s * N, L, N, t, dt, device, use_bias=True)
        one = make_config(SCALING_BATCH, s, s, 1, 1, t, dt, device, use_bias=True)
        if cfg is None or one is None:
            continue
        big = estimate_scaling(cfg, t, dt, device, use_bias=True)
        base = estimate_scaling(one, t, dt, device, use_bias=True)
        model_eff = big.modeled_gops / (L * N * base.modeled_gops)
        rows.append({"dtypes": key, "tiles": L * N, "model_efficiency": round(model_eff, 4),
                     "measured_efficiency": eff})
    return rows


def build_report(plan: CompiledPlan) -> dict:
    layers = layer_rows(plan)
    samples = plan.layers[0].rows
    pipe = pipeline_interval([r["_est"] for r in layers], samples)
    for r in layers:
        del r["_est"]
    return {
        "model": plan.name,
        "device": plan.device.name,
        "layers": layers,
        "pipeline": {
            "samples_per_batch": samples,
            "interval_cycles": pipe.interval_cycles,
            "interval_us_per_sample": round(pipe.interval_s_per_sample * 1e6, 6),
            "latency_us": round(pipe.latency_s * 1e6, 6),
            "tops": round(pipe.tops, 4),
            "bottleneck": plan.layers[pipe.bottleneck].id,
            "tiles_used": sum(r["tiles"] for r in layers),
        },
        "reference": {
            "note": "measured columns are board measurements; model columns are estimates",
            "single_kernel": kernel_reference(plan.device),
            "scaling": scaling_reference(plan.device),
            "mlp7_measured": MEASURED_MLP7,
        },
    }


def _table(headers: list[str], rows: list[list]) -> list[str]:
    cells = [[str(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    out = [line, "-" * len(line)]
    out += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return out


def format_report(rep: dict) -> str:
    lines = [f"model {rep['model']} on {rep['device']}", ""]
    lines += _table(
        ["layer", "dtypes", "tiling", "cascade", "tiles", "GOPS", "eff/peak", "bound", "interval_us", "latency_us"],
        [[r["layer"], r["dtypes"], r["tiling"], f"{r['cascade'][0]}x{r['cascade'][1]}", r["tiles"],
          f"{r['gops']:.1f}", f"{100 * r['efficiency_vs_peak']:.1f}%", r["bound_kind"],
          r["interval_us"], r["latency_us"]] for r in rep["layers"]])
    p = rep["pipeline"]
    lines += ["", f"pipeline: {p['tiles_used']} tiles, interval {p['interval_us_per_sample']} us/sample, "
                  f"latency {p['latency_us']} us, {p['tops']} TOPS (bottleneck {p['bottleneck']})", ""]
    ref = rep["reference"]
    lines.append("single kernel, model vs board measurement (GOPS):")
    lines += _table(["workload", "tiling", "peak", "model", "model+bias+relu", "measured", "measured+bias+relu"],
                    [[r["workload"], r["tiling"], r["peak_gops"], r["model_gops"], r["model_bias_relu_gops"],
                      r["measured_gops"], r["measured_bias_relu_gops"]] for r in ref["single_kernel"]])
    lines += ["", "array scaling efficiency, model vs board measurement:"]
    lines += _table(["dtypes", "tiles", "model", "measured"],
                    [[r["dtypes"], r["tiles"], f"{100 * r['model_efficiency']:.1f}%",
                      f"{100 * r['measured_efficiency']:.1f}%"] for r in ref["scaling"]])
    m = ref["mlp7_measured"]
    lines += ["", f"7-layer 512-wide MLP on the board: {m['tops']} TOPS, {m['interval_us']} us/sample "
                  f"(compare with the pipeline line when this plan is that model)"]
    return "\n".join(lines) + "\n"


def report_json(rep: dict) -> str:
    return json.dumps(rep, sort_keys=True, indent=1) + "\n"
