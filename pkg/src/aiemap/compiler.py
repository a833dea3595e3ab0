"""The pass pipeline: lower, quantize, resolve, pack, graph_plan, place, emit.

Each pass mutates the IR graph through :meth:`AieIrNode.assign`, so it only
touches attributes it owns and never anything the user pinned.  Running a
pass twice gives the same graph.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Callable

import numpy as np

from .device import DeviceDesc, dtype_range
from .errors import InfeasibleError, ValidationError
from .fixedpoint import quantize_float
from .frontend import QuantModel, reshape_target, serialize_model, validate_model
from .ir import AieIrGraph, AieIrNode, UserConfig, lower, validate_overrides
from .memtile import block_tiler, plan_retile
from .placement import Block, place_bnb, place_greedy
from .plan import BufferPlan, CompiledPlan, LayerPlan
from .scaling import min_tiles, pack_weights, resolve_layer

PASSES = ("lower", "quantize", "resolve", "pack", "graph_plan", "place", "emit")


def quantize_pass(graph: AieIrGraph):
    """Integer weights for every linear node; float weights are rounded
    half-to-even with ``weight_frac`` fractional bits and saturated."""
    for n in graph.linear_nodes:
        wdt, adt = n.dtypes["wgt"], n.dtypes["acc"]
        if n.weights is None:
            if n.weights_float is None:
                raise ValidationError(f"{n.id}: no weights")
            n.assign("weights", quantize_float(n.weights_float, wdt, n.weight_frac), "quantize")
            graph.log(f"quantize: {n.id} weights from float, frac={n.weight_frac}, {wdt.name}")
        w = np.asarray(n.weights, dtype=np.int64)
        lo, hi = dtype_range(wdt)
        if w.size and (w.min() < lo or w.max() > hi):
            raise ValidationError(f"{n.id}: weights outside {wdt.name} range")
        if w.shape != (n.f_out, n.f_in):
            raise ValidationError(f"{n.id}: weights shape {w.shape} != {(n.f_out, n.f_in)}")
        n.assign("weights", w, "quantize")
        if n.bias is not None:
            b = np.asarray(n.bias, dtype=np.int64)
            lo, hi = dtype_range(adt)
            if b.size and (b.min() < lo or b.max() > hi):
                raise ValidationError(f"{n.id}: bias outside {adt.name} range")
            n.assign("bias", b, "quantize")


def layer_budgets(graph: AieIrGraph, available: int) -> dict[str, int]:
    """Tile budget per layer, proportional to its MAC count but never below
    the smallest rectangle the layer fits on."""
    nodes = graph.linear_nodes
    macs = {n.id: n.rows * n.f_in * n.f_out for n in nodes}
    total = sum(macs.values())
    floor = {n.id: min_tiles(n, graph.device) for n in nodes}
    return {n.id: max(floor[n.id], int(available * macs[n.id] / total)) for n in nodes}


def resolve_pass(graph: AieIrGraph, budgets: dict[str, int]):
    for n in graph.linear_nodes:
        cfg, t = resolve_layer(n, graph.device, budgets[n.id])
        pinned = [a for a, v in (("tiling", t), ("cascade", cfg)) if not n.assign(a, v, "resolve")]
        graph.log(f"resolve: {n.id} tiling={t} cascade={cfg.cas_len}x{cfg.cas_num} "
                  f"slices={cfg.f_in_slice}/{cfg.f_out_slice} padded={cfg.padded_f_in}/{cfg.padded_f_out} "
                  f"rows={cfg.rows}->{cfg.padded_rows} batch_tile={cfg.batch_tile} budget={budgets[n.id]}"
                  + (f" pinned={pinned}" if pinned else ""))


def pack_pass(graph: AieIrGraph):
    for n in graph.linear_nodes:
        d = n.dtypes
        packed = pack_weights(n.weights, n.bias if n.fused_bias else None, n.cascade, n.tiling,
                              d["wgt"], d["acc"], graph.device)
        n.assign("packed", packed, "pack")
        graph.log(f"pack: {n.id} {packed.summary()}")


def _view_dims(node: AieIrNode, written: list[int]) -> list[int]:
    # a reshape after the last layer is applied by the host, not a memory tile
    if node.relayout_in is None or node.op_kind == "output":
        return list(written)
    return reshape_target(node.relayout_in)


def graph_plan_pass(graph: AieIrGraph):
    """Insert a memory-tile buffer on every edge and give it its tilers.

    Producer cascade row ``j`` writes its ``M x N`` blocks at feature offset
    ``j * f_out_slice``; consumer column ``i`` reads ``M x K`` blocks at
    offset ``i * f_in_slice`` and the read is broadcast to all of that
    column's cascade rows.  Reads past the logical extent are zero padding,
    writes past it (padded rows and features) are dropped.
    """
    if any(n.op_kind == "memtile_buffer" for n in graph.nodes):
        # already planned; recompute tilers in place
        graph.nodes = [n for n in graph.nodes if n.op_kind != "memtile_buffer"]
    dev = graph.device
    chain = graph.nodes
    new_nodes: list[AieIrNode] = []
    for prod, cons in zip(chain[:-1], chain[1:]):
        new_nodes.append(prod)
        if prod.op_kind == "input":
            written = list(prod.tensor_dims["out"])
            if len(written) > 2:
                written = [math.prod(written[:-1]), written[-1]]
        else:
            written = [prod.rows, prod.f_out]
        view = _view_dims(cons, written)
        if math.prod(view) != math.prod(written):
            raise ValidationError(f"{cons.id}: relayout {written} -> {view} changes the element count")
        storage = cons.dtypes["act"] if cons.op_kind == "linear" else prod.dtypes["out"]
        p_dt = prod.dtypes["out"] if prod.op_kind == "linear" else storage
        rows, feats = written
        if prod.op_kind == "linear":
            cfg, t = prod.cascade, prod.tiling
            write = [block_tiler(written, (t.m, t.n), p_dt, offset=(0, j * cfg.f_out_slice),
                                 extent=(cfg.padded_rows, cfg.f_out_slice)) for j in range(cfg.cas_num)]
        else:
            write = [block_tiler(written, (1, feats), p_dt)]
        if cons.op_kind == "linear":
            cfg, t = cons.cascade, cons.tiling
            # validates widening and capacity for the canonical pair
            plan_retile((write[0].tile_dims[0], write[0].tile_dims[1]), (t.m, t.k), view,
                        (p_dt, storage))
            read = [block_tiler(view, (t.m, t.k), storage, offset=(0, i * cfg.f_in_slice),
                                extent=(cfg.padded_rows, cfg.f_in_slice)) for i in range(cfg.cas_len)]
            fanout = cfg.cas_num
        else:
            read = [block_tiler(view, (1, view[1]), storage)]
            fanout = 1
        nbytes = 2 * rows * feats * storage.nbytes
        span = math.ceil(nbytes / dev.memtile_capacity_bytes)
        if span > dev.memtile_count:
            raise InfeasibleError(f"buffer {prod.id}->{cons.id} needs {nbytes} B, "
                                  f"more than all {dev.memtile_count} memory tiles hold")
        mt = AieIrNode(id=f"mt_{prod.id}_{cons.id}", op_kind="memtile_buffer",
                       tensor_dims={"in": written, "out": view}, dtypes={"act": storage, "out": storage})
        mt.assign("dma_plans", {"write": write, "read": read}, "graph_plan")
        mt.assign("memtile", {"producer": prod.id, "consumer": cons.id, "bytes": nbytes, "span": span,
                              "fanout": fanout,
                              "relayout": cons.relayout_in if cons.op_kind == "linear" else None}, "graph_plan")
        new_nodes.append(mt)
        graph.log(f"graph_plan: {mt.id} {rows}x{feats} {storage.name} {nbytes} B over {span} memtile(s), "
                  f"{len(write)} write / {len(read)} read tiler(s), fanout {fanout}")
    new_nodes.append(chain[-1])
    graph.nodes = new_nodes
    graph.edges = [(a.id, b.id) for a, b in zip(new_nodes[:-1], new_nodes[1:])]
    graph.check_chain()
    for n in graph.linear_nodes:
        kinds = {graph.node(p).op_kind for p in graph.predecessors(n.id)} | \
                {graph.node(s).op_kind for s in graph.successors(n.id)}
        assert kinds == {"memtile_buffer"}


def blocks_for(graph: AieIrGraph) -> list[Block]:
    return [Block(n.id, n.cascade.cas_len, n.cascade.cas_num,
                  tuple(n.override_values["placement"]) if "placement" in n.overrides else None)
            for n in graph.linear_nodes]


def _assign_memtiles(graph: AieIrGraph):
    """Anchor each buffer's memory tiles under its consumer (under the last
    layer's output column for the final buffer), nearest free columns first."""
    dev = graph.device
    used = [0] * dev.memtile_count
    for mt in (n for n in graph.nodes if n.op_kind == "memtile_buffer"):
        info = mt.memtile
        cons = graph.node(info["consumer"])
        prod = graph.node(info["producer"])
        if cons.op_kind == "linear":
            pref = cons.placement[0]
        else:
            pref = prod.placement[0] + prod.cascade.cas_len - 1
        span = info["span"]
        share = math.ceil(info["bytes"] / span)
        starts = sorted(range(dev.memtile_count - span + 1), key=lambda s: (abs(s - pref), s))
        for s in starts:
            if all(used[c] + share <= dev.memtile_capacity_bytes for c in range(s, s + span)):
                for c in range(s, s + span):
                    used[c] += share
                mt.assign("placement", (s, -1), "place")
                break
        else:
            raise InfeasibleError(f"{mt.id}: no run of {span} memory tile(s) with {share} B free each")
    graph.log("place: memtile usage " + ",".join(str(u) for u in used))


def place_pass(graph: AieIrGraph, config: UserConfig):
    dev = graph.device
    blocks = blocks_for(graph)
    sol = place_bnb(blocks, dev, lam=config.lam, mu=config.mu, start=config.start,
                    time_limit=config.time_limit, node_limit=config.node_limit)
    for n, a in zip(graph.linear_nodes, sol.anchors):
        n.assign("placement", tuple(a), "place")
        if "placement" in n.overrides and tuple(n.placement) != tuple(a):
            raise InfeasibleError(f"{n.id}: pinned placement {n.placement} not honoured")
    graph.log(f"place: J={sol.cost:.6f} optimal={sol.optimal} nodes={sol.nodes_explored} "
              + " ".join(f"{b.graph_id}@{tuple(a)}" for b, a in zip(blocks, sol.anchors)))
    _assign_memtiles(graph)
    return sol


def _fits(graph: AieIrGraph) -> bool:
    blocks = blocks_for(graph)
    dev = graph.device
    if sum(b.width * b.height for b in blocks) > dev.tiles:
        return False
    for mode in ("right", "up"):
        try:
            place_greedy(blocks, dev, mode)
            return True
        except InfeasibleError:
            pass
    return False


def config_hash(model: QuantModel, device: DeviceDesc, config: UserConfig) -> str:
    h = hashlib.sha256()
    h.update(serialize_model(model))
    h.update(json.dumps(device.to_dict(), sort_keys=True).encode())
    h.update(json.dumps(config.to_dict(), sort_keys=True, default=list).encode())
    return h.hexdigest()


def build_plan(graph: AieIrGraph, sol, config: UserConfig, digest: str) -> CompiledPlan:
    layers = []
    for n in graph.linear_nodes:
        layers.append(LayerPlan(
            id=n.id, rows=n.rows, f_in=n.f_in, f_out=n.f_out, dtypes=dict(n.dtypes), shift=n.shift,
            use_bias=n.fused_bias, use_relu=n.fused_relu, weight_frac=n.weight_frac,
            tiling=n.tiling, cascade=n.cascade, anchor=tuple(n.placement), packed=n.packed,
            relayout_in=n.relayout_in,
        ))
    buffers = []
    for mt in (n for n in graph.nodes if n.op_kind == "memtile_buffer"):
        info = mt.memtile
        buffers.append(BufferPlan(
            id=mt.id, producer=info["producer"], consumer=info["consumer"],
            dims=tuple(mt.tensor_dims["in"]), view_dims=tuple(mt.tensor_dims["out"]),
            storage=mt.dtypes["act"], write=list(mt.dma_plans["write"]), read=list(mt.dma_plans["read"]),
            fanout=info["fanout"], nbytes=info["bytes"], span=info["span"], column=mt.placement[0],
            relayout=info["relayout"],
        ))
    placement = {
        "method": sol.method, "cost": round(sol.cost, 9), "optimal": sol.optimal,
        "lambda": config.lam, "mu": config.mu, "start": list(config.start),
        "anchors": {b.graph_id: list(a) for b, a in zip(sol.blocks, sol.anchors)},
        "blocks": {b.graph_id: [b.width, b.height] for b in sol.blocks},
    }
    out_node = graph.nodes[-1]
    return CompiledPlan(
        name=graph.name, device=graph.device, input_shape=list(graph.input_shape),
        input_shift=graph.input_shift, rounding=config.rounding, layers=layers, buffers=buffers,
        placement=placement, output_relayout=out_node.relayout_in,
        metadata={"config_hash": digest, "pass_log": list(graph.pass_log), "passes": list(PASSES)},
    )


def compile_model(model: QuantModel, device: DeviceDesc, config: UserConfig | None = None,
                  on_pass: Callable[[str, AieIrGraph], None] | None = None) -> CompiledPlan:
    """Run every pass and return the plan.

    ``on_pass(name, graph)`` is called after each pass (used by --dump-ir).
    Tile budgets start proportional to each layer's MACs over
    ``tile_fraction`` of the array, never below the layer's smallest
    rectangle, and shrink by 20% until a legal packing exists.  With the
    default fraction of 0 every layer gets its smallest rectangle.  The
    first failing pass aborts with its diagnostic.
    """
    config = config or UserConfig()
    validate_model(model, device)
    notify = on_pass or (lambda name, g: None)

    graph = lower(model, device, config)
    bad = validate_overrides(graph, device)
    if bad:
        raise ValidationError("invalid user override(s): " + "; ".join(str(v) for v in bad))
    notify("lower", graph)
    quantize_pass(graph)
    notify("quantize", graph)

    available = max(1, int(device.tiles * config.tile_fraction))
    floor = sum(min_tiles(n, device) for n in graph.linear_nodes)
    if floor > device.tiles:
        raise InfeasibleError(f"placement: layers need at least {floor} tiles, the device has {device.tiles}")
    while True:
        budgets = layer_budgets(graph, available)
        resolve_pass(graph, budgets)
        if _fits(graph) or available <= len(graph.linear_nodes):
            break
        graph.log(f"resolve: {available} tiles did not pack greedily, shrinking budgets")
        available = int(available * 0.8)
    notify("resolve", graph)
    pack_pass(graph)
    notify("pack", graph)
    graph_plan_pass(graph)
    notify("graph_plan", graph)
    sol = place_pass(graph, config)
    notify("place", graph)
    plan = build_plan(graph, sol, config, config_hash(model, device, config))
    graph.log(f"emit: plan with {len(plan.layers)} layer(s), {len(plan.buffers)} buffer(s)")
    plan.metadata["pass_log"] = list(graph.pass_log)
    notify("emit", graph)
    return plan
