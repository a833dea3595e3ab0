"""Command line interface.

    aiemap compile  MODEL [--blob B] [--config C] [--out DIR] [--dump-ir STAGE]
    aiemap simulate PLAN_DIR --inputs X.json [--mode fast|checked] [--quantize]
    aiemap place    INSTANCE [--method bnb|greedy_right|greedy_up|exhaustive]
    aiemap report   PLAN_DIR [--json]
    aiemap dump-ir  MODEL --stage STAGE

Every subcommand takes ``--device FILE`` (default: the built-in AIE-ML
description).  Exit codes: 0 ok, 2 validation error, 3 infeasible,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .compiler import PASSES, compile_model
from .device import load_device
from .emit import emit
from .errors import AieMapError, ValidationError
from .frontend import parse_model
from .ir import dump_ir, load_config
from .placement import load_instance, place_bnb, place_exhaustive, place_greedy, render_ascii, render_svg
from .plan import load_plan
from .report import build_report, format_report, report_json
from .simulate import MODES, dequantize_io, quantize_io, simulate


def _read(path: str | None) -> bytes | None:
    if path is None:
        return None
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None


def _load_inputs(model_args):
    device = load_device(_read(model_args.device))
    model = parse_model(_read(model_args.model), _read(getattr(model_args, "blob", None)), device)
    config = load_config(_read(getattr(model_args, "config", None)))
    return model, device, config


def cmd_compile(args) -> int:
    model, device, config = _load_inputs(args)
    dumps = {}

    def on_pass(name, graph):
        if args.dump_ir in (name, "all"):
            dumps[name] = dump_ir(graph, name)

    plan = compile_model(model, device, config, on_pass=on_pass)
    for name in PASSES:
        if name in dumps:
            sys.stdout.write(dumps[name])
    files = emit(plan, args.out, sources=not args.no_sources)
    print(f"wrote {len(files)} file(s) to {args.out}", file=sys.stderr)
    return 0


def cmd_dump_ir(args) -> int:
    model, device, config = _load_inputs(args)
    out = {}

    def on_pass(name, graph):
        if name == args.stage:
            out["text"] = dump_ir(graph, name)
            raise _StopPipeline

    try:
        compile_model(model, device, config, on_pass=on_pass)
    except _StopPipeline:
        pass
    sys.stdout.write(out["text"])
    return 0


class _StopPipeline(Exception):
    pass


def _open_plan(plan_dir: str):
    d = Path(plan_dir)
    return load_plan(_read(str(d / "plan.json")), _read(str(d / "weights.bin")))


def cmd_simulate(args) -> int:
    plan = _open_plan(args.plan)
    try:
        data = json.loads(_read(args.inputs))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{args.inputs} line {e.lineno}: {e.msg}") from None
    x = np.asarray(data)
    if args.quantize:
        x = quantize_io(x.astype(np.float64), plan)
    res = simulate(plan, x, mode=args.mode, workers=args.workers)
    y = dequantize_io(res.outputs, plan).tolist() if args.dequantize else res.outputs.tolist()
    text = json.dumps({"mode": res.mode, "shape": list(res.outputs.shape), "outputs": y}) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_place(args) -> int:
    inst = load_instance(_read(args.instance))
    grid = (inst["cols"], inst["rows"])
    if args.device:
        dev = load_device(_read(args.device))
        grid = (dev.cols, dev.rows)
    kw = dict(lam=inst["lam"], mu=inst["mu"], start=inst["start"])
    if args.method == "bnb":
        sol = place_bnb(inst["blocks"], grid, time_limit=args.time_limit or inst["time_limit"], **kw)
    elif args.method == "exhaustive":
        sol = place_exhaustive(inst["blocks"], grid, **kw)
    else:
        sol = place_greedy(inst["blocks"], grid, args.method.split("_")[1], kw["start"], kw["lam"], kw["mu"])
    text = json.dumps(sol.as_dict(), sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.svg:
        Path(args.svg).write_text(render_svg(sol, grid))
    sys.stderr.write(render_ascii(sol, grid))
    return 0


def cmd_report(args) -> int:
    rep = build_report(_open_plan(args.plan))
    sys.stdout.write(report_json(rep) if args.json else format_report(rep))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", metavar="FILE", help="device description JSON (default: built-in AIE-ML)")

    p = argparse.ArgumentParser(prog="aiemap", description="Map quantized MLPs onto a tile array.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="compile a model into a plan directory")
    c.add_argument("model")
    c.add_argument("--blob", help="sidecar tensor file for @blob references")
    c.add_argument("--config", help="user config JSON (overrides, lambda, mu, ...)")
    c.add_argument("--out", default="plan_out", help="output directory (default: plan_out)")
    c.add_argument("--dump-ir", choices=PASSES + ("all",), help="print the IR after this pass")
    c.add_argument("--no-sources", action="store_true", help="skip rendering source templates")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", parents=[common], help="run inputs through a compiled plan")
    s.add_argument("plan", help="directory holding plan.json and weights.bin")
    s.add_argument("--inputs", required=True, help="JSON nested list with the model's input shape")
    s.add_argument("--mode", choices=MODES, default="fast")
    s.add_argument("--workers", type=int, default=1, help="threads for checked mode")
    s.add_argument("--quantize", action="store_true", help="inputs are floats; quantize them first")
    s.add_argument("--dequantize", action="store_true", help="print outputs as floats")
    s.add_argument("--output", help="write results here instead of stdout")
    s.set_defaults(func=cmd_simulate)

    pl = sub.add_parser("place", parents=[common], help="place blocks from an instance file")
    pl.add_argument("instance")
    pl.add_argument("--method", choices=("bnb", "greedy_right", "greedy_up", "exhaustive"), default="bnb")
    pl.add_argument("--time-limit", type=float, help="seconds for branch and bound")
    pl.add_argument("--out", help="solution JSON path (default: stdout)")
    pl.add_argument("--svg", help="also write an SVG rendering here")
    pl.set_defaults(func=cmd_place)

    r = sub.add_parser("report", parents=[common], help="performance report of a plan directory")
    r.add_argument("plan")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_report)

    d = sub.add_parser("dump-ir", parents=[common], help="print the IR after a pass")
    d.add_argument("model")
    d.add_argument("--stage", choices=PASSES, required=True)
    d.add_argument("--blob")
    d.add_argument("--config")
    d.set_defaults(func=cmd_dump_ir)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AieMapError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
