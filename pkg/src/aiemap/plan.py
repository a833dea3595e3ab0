"""Compiled plans and their on-disk form.

A plan is two files:

``plan.json``
    Canonical JSON (sorted keys, fixed separators) with a versioned header
    ``{"format": "aiemap-plan", "version": 1, ...}``.  It lists the device,
    every layer's resolved attributes and anchor, every memory-tile buffer
    with its write and read tilers, the placement and a pass log.
``weights.bin``
    Little-endian weight and bias data.  For each layer, tile blobs follow in
    row-major tile order (cascade row ``j`` outer, cascade position ``i``
    inner), then one bias vector per cascade row.  ``plan.json`` records the
    byte offset and length of every piece.

Both files together are enough to simulate; nothing refers back to the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .device import DeviceDesc, IntDType, device_from_dict
from .errors import ValidationError
from .kernel import Tiling, make_tiling
from .memtile import DmaTiler
from .scaling import CascadeConfig, PackedWeights

PLAN_FORMAT = "aiemap-plan"
PLAN_VERSION = 1


@dataclass
class LayerPlan:
    id: str
    rows: int
    f_in: int
    f_out: int
    dtypes: dict[str, IntDType]
    shift: int
    use_bias: bool
    use_relu: bool
    weight_frac: int
    tiling: Tiling
    cascade: CascadeConfig
    anchor: tuple[int, int]
    packed: PackedWeights
    relayout_in: dict | None = None

    @property
    def dtype_tuple(self):
        d = self.dtypes
        return d["act"], d["wgt"], d["acc"], d["out"]

    def tiles(self) -> list[tuple[int, int]]:
        """Grid coordinates of every compute tile, (col, row)."""
        c0, r0 = self.anchor
        return [(c0 + i, r0 + j) for j in range(self.cascade.cas_num) for i in range(self.cascade.cas_len)]


@dataclass
class BufferPlan:
    id: str
    producer: str
    consumer: str
    dims: tuple[int, int]                  # as written by the producer
    view_dims: tuple[int, int]             # as read by the consumer (after relayout)
    storage: IntDType
    write: list[DmaTiler]
    read: list[DmaTiler]
    fanout: int
    nbytes: int                            # both ping-pong banks
    span: int                              # memory tiles used
    column: int = 0                        # first memory-tile column
    relayout: dict | None = None

    def columns(self) -> list[int]:
        return list(range(self.column, self.column + self.span))


@dataclass
class CompiledPlan:
    name: str
    device: DeviceDesc
    input_shape: list[int]
    input_shift: int
    rounding: str
    layers: list[LayerPlan]
    buffers: list[BufferPlan]
    placement: dict
    output_relayout: dict | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def input_dtype(self) -> IntDType:
        return self.layers[0].dtypes["act"]

    @property
    def output_dtype(self) -> IntDType:
        return self.layers[-1].dtypes["out"]

    def output_frac_bits(self) -> int:
        """Fractional bits of the final output given the input's."""
        frac = self.input_shift
        for l in self.layers:
            frac += l.weight_frac - l.shift
        return frac

    # serialization -----------------------------------------------------

    def weight_blob(self) -> tuple[bytes, list[dict]]:
        """(blob bytes, per-layer index of byte ranges)."""
        parts: list[bytes] = []
        index = []
        off = 0
        for l in self.layers:
            entry = {"tiles": [], "biases": []}
            wdt, adt = l.packed.wgt_dtype, l.packed.acc_dtype
            for j in range(l.cascade.cas_num):
                for i in range(l.cascade.cas_len):
                    data = np.asarray(l.packed.blobs[(i, j)]).astype(wdt.numpy).tobytes()
                    entry["tiles"].append({"tile": [i, j], "offset": off, "length": len(data)})
                    parts.append(data)
                    off += len(data)
            for j in sorted(l.packed.biases):
                data = np.asarray(l.packed.biases[j]).astype(adt.numpy).tobytes()
                entry["biases"].append({"row": j, "offset": off, "length": len(data)})
                parts.append(data)
                off += len(data)
            index.append(entry)
        return b"".join(parts), index

    def to_dict(self, blob_index: list[dict] | None = None) -> dict:
        if blob_index is None:
            blob_index = self.weight_blob()[1]
        return {
            "format": PLAN_FORMAT,
            "version": PLAN_VERSION,
            "name": self.name,
            "device": self.device.to_dict(),
            "input": {"shape": list(self.input_shape), "shift": self.input_shift,
                      "dtype": self.input_dtype.name},
            "rounding": self.rounding,
            "output_relayout": self.output_relayout,
            "layers": [
                {
                    "id": l.id, "rows": l.rows, "f_in": l.f_in, "f_out": l.f_out,
                    "dtypes": {k: v.name for k, v in sorted(l.dtypes.items())},
                    "shift": l.shift, "use_bias": l.use_bias, "use_relu": l.use_relu,
                    "weight_frac": l.weight_frac,
                    "tiling": list(l.tiling.shape),
                    "cascade": l.cascade.to_dict(),
                    "anchor": list(l.anchor),
                    "relayout_in": l.relayout_in,
                    "weights": blob_index[n],
                }
                for n, l in enumerate(self.layers)
            ],
            "buffers": [
                {
                    "id": b.id, "producer": b.producer, "consumer": b.consumer,
                    "dims": list(b.dims), "view_dims": list(b.view_dims),
                    "storage": b.storage.name, "fanout": b.fanout,
                    "bytes": b.nbytes, "span": b.span, "column": b.column,
                    "relayout": b.relayout,
                    "write": [t.to_dict() for t in b.write],
                    "read": [t.to_dict() for t in b.read],
                }
                for b in self.buffers
            ],
            "placement": self.placement,
            "metadata": self.metadata,
        }

    def dumps(self) -> tuple[bytes, bytes]:
        """(plan.json bytes, weights.bin bytes); both deterministic."""
        blob, index = self.weight_blob()
        text = json.dumps(self.to_dict(index), sort_keys=True, indent=1, separators=(",", ": ")) + "\n"
        return text.encode(), blob


def _blob_array(blob: bytes, entry: dict, dt: IntDType) -> np.ndarray:
    off, length = entry["offset"], entry["length"]
    if off + length > len(blob):
        raise ValidationError(f"weight blob too short: need bytes {off}..{off + length}, have {len(blob)}")
    return np.frombuffer(blob[off:off + length], dtype=dt.numpy).astype(np.int64)


def load_plan(plan_bytes: bytes | str, blob: bytes) -> CompiledPlan:
    try:
        d = json.loads(plan_bytes)
    except json.JSONDecodeError as e:
        raise ValidationError(f"plan file line {e.lineno}: {e.msg}") from None
    if d.get("format") != PLAN_FORMAT:
        raise ValidationError("not a plan file (missing format header)")
    if d.get("version") != PLAN_VERSION:
        raise ValidationError(f"plan version {d.get('version')} not supported (expected {PLAN_VERSION})")
    device = device_from_dict(d["device"])
    layers = []
    for ld in d["layers"]:
        dtypes = {k: IntDType.parse(v) for k, v in ld["dtypes"].items()}
        t = make_tiling(ld["tiling"], dtypes["act"], dtypes["wgt"], device)
        cfg = CascadeConfig.from_dict(ld["cascade"])
        blobs = {tuple(e["tile"]): _blob_array(blob, e, dtypes["wgt"]) for e in ld["weights"]["tiles"]}
        biases = {e["row"]: _blob_array(blob, e, dtypes["acc"]) for e in ld["weights"]["biases"]}
        packed = PackedWeights(blobs, biases, dtypes["wgt"], dtypes["acc"], cfg.f_in_slice, cfg.f_out_slice)
        layers.append(LayerPlan(
            id=ld["id"], rows=ld["rows"], f_in=ld["f_in"], f_out=ld["f_out"], dtypes=dtypes,
            shift=ld["shift"], use_bias=ld["use_bias"], use_relu=ld["use_relu"],
            weight_frac=ld["weight_frac"], tiling=t, cascade=cfg, anchor=tuple(ld["anchor"]),
            packed=packed, relayout_in=ld["relayout_in"],
        ))
    buffers = [
        BufferPlan(
            id=bd["id"], producer=bd["producer"], consumer=bd["consumer"],
            dims=tuple(bd["dims"]), view_dims=tuple(bd["view_dims"]),
            storage=IntDType.parse(bd["storage"]),
            write=[DmaTiler.from_dict(t) for t in bd["write"]],
            read=[DmaTiler.from_dict(t) for t in bd["read"]],
            fanout=bd["fanout"], nbytes=bd["bytes"], span=bd["span"], column=bd["column"],
            relayout=bd["relayout"],
        )
        for bd in d["buffers"]
    ]
    return CompiledPlan(
        name=d["name"], device=device, input_shape=d["input"]["shape"], input_shift=d["input"]["shift"],
        rounding=d["rounding"], layers=layers, buffers=buffers, placement=d["placement"],
        output_relayout=d["output_relayout"], metadata=d["metadata"],
    )
