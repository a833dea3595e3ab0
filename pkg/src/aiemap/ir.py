"""The compiler's graph IR.

Nodes start out with what lowering knows (shapes, dtypes, fusion flags) and
each later pass fills in the attributes it owns:

=============  =====================================================
pass           attributes written
=============  =====================================================
lower          op_kind, tensor_dims, dtypes, fused_bias, fused_relu,
               shift, weights, bias, relayout_in
quantize       dtypes, weights, bias
resolve        tiling, cascade
pack           packed
graph_plan     dma_plans, memtile (memtile_buffer nodes only)
place          placement
=============  =====================================================

Attributes listed in ``node.overrides`` came from the user config and are
never touched by a pass.  Only single-chain feed-forward graphs are accepted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .device import DeviceDesc, IntDType
from .errors import InvariantViolation, LoweringError, ValidationError
from .frontend import QuantModel, activation_shapes
from .kernel import make_tiling, native_tiling

OP_KINDS = ("input", "linear", "memtile_buffer", "output")

ATTRIBUTE_OWNERS = {
    "lower": {"op_kind", "tensor_dims", "dtypes", "fused_bias", "fused_relu", "shift",
              "weights", "bias", "relayout_in", "weight_frac", "weights_float"},
    "quantize": {"dtypes", "weights", "bias"},
    "resolve": {"tiling", "cascade"},
    "pack": {"packed"},
    "graph_plan": {"dma_plans", "memtile"},
    "place": {"placement"},
}
OVERRIDE_FAMILIES = ("dtypes", "cascade", "tiling", "placement")


@dataclass
class UserConfig:
    """User directives.  ``layers`` maps a layer name to any of
    ``tiling: [m, k, n]``, ``cascade: [cas_len, cas_num]`` (or a dict that
    also gives ``f_in_slice`` / ``f_out_slice``), ``placement: [col, row]``
    and ``dtypes: {act, wgt, acc, out}``.

    ``tile_fraction`` is the share of the array that layer budgets are drawn
    from, split in proportion to each layer's MACs.  The default 0 gives every
    layer the smallest rectangle its weights fit on.  ``node_limit`` caps the
    placement search (deterministically); ``time_limit`` caps it in seconds.
    """

    layers: dict[str, dict] = field(default_factory=dict)
    lam: float = 1.0
    mu: float = 0.05
    start: tuple[int, int] = (0, 0)
    time_limit: float | None = None
    node_limit: int | None = 200_000
    rounding: str = "half_even"
    tile_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {"layers": self.layers, "lambda": self.lam, "mu": self.mu, "start": list(self.start),
                "time_limit": self.time_limit, "node_limit": self.node_limit, "rounding": self.rounding,
                "tile_fraction": self.tile_fraction}


def load_config(data: bytes | str | None) -> UserConfig:
    if data is None:
        return UserConfig()
    try:
        d = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"config line {e.lineno}: {e.msg}") from None
    known = {"layers", "lambda", "mu", "start", "time_limit", "node_limit", "rounding", "tile_fraction"}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    for name, ov in d.get("layers", {}).items():
        bad = set(ov) - set(OVERRIDE_FAMILIES)
        if bad:
            raise ValidationError(f"config layers.{name}: unknown override(s) {', '.join(sorted(bad))}")
    cfg = UserConfig(
        layers=d.get("layers", {}),
        lam=float(d.get("lambda", 1.0)),
        mu=float(d.get("mu", 0.05)),
        start=tuple(d.get("start", (0, 0))),
        time_limit=d.get("time_limit"),
        node_limit=d.get("node_limit", 200_000),
        rounding=d.get("rounding", "half_even"),
        tile_fraction=float(d.get("tile_fraction", 0.0)),
    )
    if cfg.rounding not in ("half_even", "half_up", "floor"):
        raise ValidationError(f"config rounding: unknown mode {cfg.rounding!r}")
    return cfg


@dataclass
class AieIrNode:
    id: str
    op_kind: str
    tensor_dims: dict[str, list[int]] = field(default_factory=dict)
    dtypes: dict[str, IntDType] = field(default_factory=dict)
    fused_bias: bool = False
    fused_relu: bool = False
    shift: int = 0
    weights: np.ndarray | None = None
    weights_float: np.ndarray | None = None
    weight_frac: int = 0
    bias: np.ndarray | None = None
    relayout_in: dict | None = None
    tiling: Any = None
    cascade: Any = None
    packed: Any = None
    placement: tuple[int, int] | None = None
    dma_plans: dict | None = None
    memtile: dict | None = None
    overrides: set[str] = field(default_factory=set)
    override_values: dict[str, Any] = field(default_factory=dict)

    def assign(self, attr: str, value, pass_name: str) -> bool:
        """Write ``attr`` on behalf of ``pass_name``.  Returns False when the
        attribute is pinned by the user and was left alone."""
        if attr not in ATTRIBUTE_OWNERS.get(pass_name, ()):
            raise InvariantViolation(f"pass {pass_name!r} does not own attribute {attr!r} (node {self.id})")
        if attr in self.overrides:
            return False
        setattr(self, attr, value)
        return True

    @property
    def rows(self) -> int:
        return self.tensor_dims["in"][0]

    @property
    def f_in(self) -> int:
        return self.tensor_dims["in"][1]

    @property
    def f_out(self) -> int:
        return self.tensor_dims["out"][1]


@dataclass
class AieIrGraph:
    nodes: list[AieIrNode]
    edges: list[tuple[str, str]]
    device: DeviceDesc
    name: str = "model"
    input_shift: int = 0
    input_shape: list[int] = field(default_factory=list)
    pass_log: list[str] = field(default_factory=list)

    def node(self, node_id: str) -> AieIrNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def linear_nodes(self) -> list[AieIrNode]:
        return [n for n in self.nodes if n.op_kind == "linear"]

    def successors(self, node_id: str) -> list[str]:
        return [d for s, d in self.edges if s == node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return [s for s, d in self.edges if d == node_id]

    def check_chain(self):
        """Acyclic single chain from one input to one output, nodes in order."""
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("duplicate node ids")
        if self.nodes[0].op_kind != "input" or self.nodes[-1].op_kind != "output":
            raise InvariantViolation("graph must start at an input node and end at an output node")
        expected = list(zip(ids[:-1], ids[1:]))
        if sorted(self.edges) != sorted(expected):
            raise InvariantViolation("graph is not a single feed-forward chain")

    def log(self, msg: str):
        self.pass_log.append(msg)


def _override_dtypes(ov: dict, node_id: str) -> dict[str, IntDType]:
    out = {}
    for k, v in ov.items():
        if k not in ("act", "wgt", "acc", "out"):
            raise ValidationError(f"node {node_id}: dtypes override has unknown key {k!r}")
        out[k] = IntDType.parse(v)
    return out


def _materialise_pins(node: AieIrNode, device: DeviceDesc):
    """Turn pinned tiling / cascade directives into typed attributes.

    Invalid directives are left unset here; :func:`validate_overrides`
    reports them.
    """
    from .scaling import make_config

    ov = node.override_values
    act, wgt = node.dtypes["act"], node.dtypes["wgt"]
    try:
        if "tiling" in ov:
            node.tiling = make_tiling(ov["tiling"], act, wgt, device)
        if "cascade" in ov:
            c = _cascade_override(ov["cascade"])
            t = node.tiling or native_tiling(act, wgt, device)
            dtypes = (act, wgt, node.dtypes["acc"], node.dtypes["out"])
            node.cascade = make_config(node.rows, node.f_in, node.f_out, int(c["cas_len"]), int(c["cas_num"]),
                                       t, dtypes, device, node.fused_bias,
                                       c.get("f_in_slice"), c.get("f_out_slice"))
    except (ValidationError, KeyError, TypeError, ValueError):
        pass


def lower(model: QuantModel, device: DeviceDesc, config: UserConfig | None = None) -> AieIrGraph:
    """Build the IR graph: input -> linear... -> output, with fused bias/ReLU.

    Reshape layers do not become nodes; they are recorded on the next node as
    ``relayout_in`` and realised by the memory tile in front of it.
    """
    config = config or UserConfig()
    names = {l.name for l in model.layers if l.kind == "dense"}
    unknown = set(config.layers) - names
    if unknown:
        raise ValidationError(f"config names unknown layer(s): {', '.join(sorted(unknown))}")
    for layer in model.layers:
        if layer.kind not in ("dense", "reshape"):
            raise LoweringError(f"layer {layer.name!r}: cannot lower op kind {layer.kind!r}")
    shapes = activation_shapes(model)
    nodes = [AieIrNode(id="input", op_kind="input", tensor_dims={"out": list(model.input_shape)})]
    pending_reshape: list[dict] = []
    for i, layer in enumerate(model.layers):
        if layer.kind == "reshape":
            pending_reshape.append(layer.reshape_spec)
            continue
        if len(pending_reshape) > 1:
            raise LoweringError(f"layer {layer.name!r}: consecutive reshape layers are not supported")
        node = AieIrNode(
            id=layer.name,
            op_kind="linear",
            tensor_dims={"in": list(shapes[i]), "out": list(shapes[i + 1])},
            dtypes={"act": layer.act_dtype, "wgt": layer.wgt_dtype, "acc": layer.acc_dtype, "out": layer.out_dtype},
            fused_bias=layer.use_bias,
            fused_relu=layer.use_relu,
            shift=layer.shift,
            weights=None if layer.weights is None else layer.weights.copy(),
            weights_float=layer.weights_float,
            weight_frac=layer.weight_frac,
            bias=None if layer.bias is None else layer.bias.copy(),
            relayout_in=pending_reshape[0] if pending_reshape else None,
        )
        pending_reshape = []
        for fam, value in config.layers.get(layer.name, {}).items():
            node.overrides.add(fam)
            node.override_values[fam] = value
            if fam == "dtypes":
                node.dtypes = {**node.dtypes, **_override_dtypes(value, node.id)}
            elif fam == "placement":
                node.placement = tuple(int(x) for x in value)
        _materialise_pins(node, device)
        nodes.append(node)
    if len(pending_reshape) > 1:
        raise LoweringError("consecutive reshape layers are not supported")
    nodes.append(AieIrNode(id="output", op_kind="output", tensor_dims={"in": list(shapes[-1])},
                           relayout_in=pending_reshape[0] if pending_reshape else None))
    edges = [(a.id, b.id) for a, b in zip(nodes[:-1], nodes[1:])]
    g = AieIrGraph(nodes=nodes, edges=edges, device=device, name=model.name,
                   input_shift=model.input_shift, input_shape=list(model.input_shape))
    g.check_chain()
    g.log(f"lower: {len(g.linear_nodes)} linear node(s); fused relu on "
          f"{[n.id for n in g.linear_nodes if n.fused_relu]}")
    for n in g.linear_nodes:
        for fam in sorted(n.overrides):
            g.log(f"lower: {n.id}.{fam} pinned by user config = {n.override_values[fam]}")
    return g


@dataclass(frozen=True)
class Violation:
    node: str
    attribute: str
    rule: str

    def __str__(self):
        return f"{self.node}.{self.attribute}: {self.rule}"


def _cascade_override(value) -> dict:
    if isinstance(value, dict):
        return dict(value)
    cas_len, cas_num = value
    return {"cas_len": cas_len, "cas_num": cas_num}


def validate_overrides(graph: AieIrGraph, device: DeviceDesc | None = None) -> list[Violation]:
    """Check every user-pinned attribute against device limits.  Empty list means ok."""
    device = device or graph.device
    out: list[Violation] = []
    for n in graph.linear_nodes:
        ov = n.override_values
        act, wgt = n.dtypes["act"], n.dtypes["wgt"]
        if "dtypes" in ov:
            if not device.supports(act, wgt):
                out.append(Violation(n.id, "dtypes", f"pair {act.name}x{wgt.name} not supported by device"))
            if n.dtypes["acc"].bits < 32:
                out.append(Violation(n.id, "dtypes", "accumulator must be at least 32 bits"))
        tiling = None
        if "tiling" in ov:
            try:
                tiling = make_tiling(ov["tiling"], act, wgt, device)
            except ValidationError as e:
                out.append(Violation(n.id, "tiling", str(e)))
        if "placement" in ov:
            c, r = ov["placement"]
            if not (0 <= c < device.cols and 0 <= r < device.rows):
                out.append(Violation(n.id, "placement",
                                     f"anchor ({c},{r}) outside {device.cols}x{device.rows} grid"))
        if "cascade" in ov:
            try:
                cas = _cascade_override(ov["cascade"])
            except (TypeError, ValueError):
                out.append(Violation(n.id, "cascade", "expected [cas_len, cas_num] or an object"))
                continue
            if tiling is None:
                try:
                    tiling = native_tiling(act, wgt, device)
                except ValidationError:
                    continue
            L, N = int(cas.get("cas_len", 0)), int(cas.get("cas_num", 0))
            if not 1 <= L <= device.cols:
                out.append(Violation(n.id, "cascade", f"cas_len {L} outside 1..{device.cols}"))
            if not 1 <= N <= device.rows:
                out.append(Violation(n.id, "cascade", f"cas_num {N} outside 1..{device.rows}"))
            if "f_in_slice" in cas:
                s = int(cas["f_in_slice"])
                if s < 1 or s % tiling.k:
                    out.append(Violation(n.id, "cascade", f"f_in_slice {s} not a positive multiple of K={tiling.k}"))
                elif L * s < n.f_in:
                    out.append(Violation(n.id, "cascade",
                                         f"cas_len*f_in_slice = {L * s} < f_in = {n.f_in}; padding cannot cover it"))
            if "f_out_slice" in cas:
                s = int(cas["f_out_slice"])
                if s < 1 or s % tiling.n:
                    out.append(Violation(n.id, "cascade", f"f_out_slice {s} not a positive multiple of N={tiling.n}"))
                elif N * s < n.f_out:
                    out.append(Violation(n.id, "cascade",
                                         f"cas_num*f_out_slice = {N * s} < f_out = {n.f_out}; padding cannot cover it"))
    return out


def _fmt(v) -> str:
    if isinstance(v, IntDType):
        return v.name
    if isinstance(v, np.ndarray):
        return f"<{v.dtype} {list(v.shape)} sum={int(v.sum())}>"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}={_fmt(v[k])}" for k in sorted(v)) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if hasattr(v, "to_dict"):
        return _fmt(v.to_dict())
    return str(v)


def dump_ir(graph: AieIrGraph, stage: str = "") -> str:
    """Deterministic text form of the graph (for golden files and --dump-ir)."""
    lines = [f"# ir {graph.name} after {stage or '?'}", f"device {graph.device.name} {graph.device.cols}x{graph.device.rows}"]
    for n in graph.nodes:
        lines.append(f"node {n.id} kind={n.op_kind}")
        for attr in ("tensor_dims", "dtypes", "fused_bias", "fused_relu", "shift", "relayout_in",
                     "tiling", "cascade", "placement", "memtile", "dma_plans"):
            v = getattr(n, attr)
            if v is None or v == {} or (n.op_kind != "linear" and attr in ("dtypes", "fused_bias", "fused_relu", "shift")):
                continue
            lines.append(f"  {attr} = {_fmt(v)}")
        if n.weights is not None:
            lines.append(f"  weights = {_fmt(n.weights)}")
        if n.bias is not None:
            lines.append(f"  bias = {_fmt(n.bias)}")
        if n.packed is not None:
            lines.append(f"  packed = {n.packed.summary()}")
        if n.overrides:
            lines.append(f"  overrides = {sorted(n.overrides)}")
    for s, d in graph.edges:
        lines.append(f"edge {s} -> {d}")
    return "\n".join(lines) + "\n"
