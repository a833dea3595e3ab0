"""Quantized model description: parsing, validation and serialization.

A model file is a JSON document::

    {
      "name": "mlp3",
      "input_shape": [8, 64],          # [rows, features] or [B, T, C]
      "input_shift": 4,                # optional fractional bits of the input
      "layers": [
        {"kind": "dense", "name": "fc1", "in_features": 64, "out_features": 32,
         "act_dtype": "i8", "wgt_dtype": "i8", "acc_dtype": "i32", "out_dtype": "i8",
         "shift": 6, "use_bias": true, "use_relu": true, "weight_frac": 5,
         "weights": [[...], ...],      # out_features rows of in_features ints
         "bias": [...]},               # accumulator-domain ints
        {"kind": "reshape", "name": "to_tokens",
         "reshape_spec": {"mixer": "token", "btc": [1, 196, 512]}}
      ]
    }

Large tensors may instead be written as ``"@blob:<offset>:<length>"``, a byte
range of a little-endian, row-major sidecar file; element width comes from
``wgt_dtype`` (weights) or ``acc_dtype`` (bias).  A dense layer may carry
``weights_float`` instead of ``weights``; those are quantized with
``weight_frac`` fractional bits by the compiler's quantization pass.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .device import DEFAULT_ACC, DEFAULT_OUT, DeviceDesc, IntDType, default_aieml_device, dtype_range
from .errors import ModelParseError, ValidationError
from .fixedpoint import quantize_float

_BLOB_RE = re.compile(r"^@blob:(\d+):(\d+)$")


@dataclass
class QuantLayer:
    kind: str
    name: str
    in_features: int = 0
    out_features: int = 0
    weights: np.ndarray | None = None          # out_features x in_features
    bias: np.ndarray | None = None
    act_dtype: IntDType = IntDType.i8
    wgt_dtype: IntDType = IntDType.i8
    acc_dtype: IntDType = IntDType.i32
    out_dtype: IntDType = IntDType.i8
    shift: int = 0
    use_bias: bool = False
    use_relu: bool = False
    weight_frac: int = 0
    weights_float: np.ndarray | None = None
    reshape_spec: dict | None = None

    @property
    def dtype_pair(self):
        return (self.act_dtype, self.wgt_dtype)


@dataclass
class QuantModel:
    name: str
    input_shape: list[int]
    layers: list[QuantLayer] = field(default_factory=list)
    input_shift: int = 0

    @property
    def dense_layers(self) -> list[QuantLayer]:
        return [l for l in self.layers if l.kind == "dense"]


def mixer_reshape(shape, mode: str) -> list[int]:
    """Shape of the 2-D GEMM operand for MLP-Mixer token or channel mixing."""
    b, t, c = (int(x) for x in shape)
    if min(b, t, c) < 1:
        raise ValidationError("B, T, C must be >= 1")
    if mode == "token":
        return [b * c, t]
    if mode == "channel":
        return [b * t, c]
    raise ValidationError(f"mixer mode must be 'token' or 'channel', got {mode!r}")


def reshape_target(spec: dict) -> list[int]:
    if "mixer" in spec:
        return mixer_reshape(spec["btc"], spec["mixer"])
    return [int(x) for x in spec["shape"]]


def apply_reshape(x: np.ndarray, spec: dict) -> np.ndarray:
    """Apply a reshape layer to an activation tensor.

    Mixer token mode expects its source in (B, T, C) order (either as
    [B, T, C] or [B*T, C]); channel mode expects (B, C, T), i.e. the output
    of token mixing.  ``layout_in`` overrides either default.
    """
    if "mixer" in spec:
        b, t, c = spec["btc"]
        mode = spec["mixer"]
        layout = spec.get("layout_in", "btc" if mode == "token" else "bct")
        src = x.reshape(b, t, c) if layout == "btc" else x.reshape(b, c, t)
        if (mode == "token") == (layout == "btc"):
            src = src.transpose(0, 2, 1)
        return np.ascontiguousarray(src).reshape(mixer_reshape((b, t, c), mode))
    return x.reshape(reshape_target(spec))


def quantize_float_weights(w, target: IntDType, shift: int) -> np.ndarray:
    return quantize_float(w, target, shift)


# parsing -------------------------------------------------------------------

def _field(d: dict, key: str, where: str, default: Any = ...):
    if key in d:
        return d[key]
    if default is ...:
        raise ModelParseError(f"{where}: missing field '{key}'")
    return default


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelParseError(f"{where}: expected integer, got {v!r}")
    return v


def _bool(v, where: str) -> bool:
    if not isinstance(v, bool):
        raise ModelParseError(f"{where}: expected true/false, got {v!r}")
    return v


def _dtype(v, where: str) -> IntDType:
    try:
        return IntDType.parse(v)
    except ValidationError:
        raise ModelParseError(f"{where}: unknown dtype {v!r}") from None


def _tensor(v, shape, dtype: IntDType, blob: bytes | None, where: str) -> np.ndarray:
    if isinstance(v, str):
        m = _BLOB_RE.match(v)
        if not m:
            raise ModelParseError(f"{where}: bad blob reference {v!r}")
        if blob is None:
            raise ModelParseError(f"{where}: blob reference but no sidecar blob given")
        off, ln = int(m.group(1)), int(m.group(2))
        if off + ln > len(blob):
            raise ModelParseError(f"{where}: blob range {off}+{ln} exceeds sidecar size {len(blob)}")
        if ln != int(np.prod(shape)) * dtype.nbytes:
            raise ModelParseError(f"{where}: blob length {ln} does not match shape {list(shape)} of {dtype.name}")
        arr = np.frombuffer(blob, dtype=dtype.numpy, count=ln // dtype.nbytes, offset=off)
        return arr.astype(np.int64).reshape(shape)
    try:
        arr = np.array(v, dtype=object)
    except ValueError:
        raise ModelParseError(f"{where}: ragged tensor") from None
    if arr.shape != tuple(shape):
        raise ModelParseError(f"{where}: expected shape {list(shape)}, got {list(arr.shape)}")
    flat = arr.reshape(-1)
    for x in flat:
        if isinstance(x, bool) or not isinstance(x, int):
            raise ModelParseError(f"{where}: non-integer entry {x!r}")
    lo, hi = dtype_range(IntDType.i64)
    if flat.size and (min(flat) < lo or max(flat) > hi):
        raise ValidationError(f"{where}: entries exceed 64-bit range")
    return arr.astype(np.int64).reshape(shape)


def _parse_layer(d: dict, i: int, blob: bytes | None) -> QuantLayer:
    where = f"layers[{i}]"
    if not isinstance(d, dict):
        raise ModelParseError(f"{where}: expected an object")
    kind = _field(d, "kind", where)
    name = str(d.get("name", f"{kind}_{i}"))
    if kind == "reshape":
        spec = _field(d, "reshape_spec", where)
        if not isinstance(spec, dict) or not ("shape" in spec or ("mixer" in spec and "btc" in spec)):
            raise ModelParseError(f"{where}.reshape_spec: needs 'shape' or 'mixer'+'btc'")
        return QuantLayer(kind="reshape", name=name, reshape_spec=dict(spec))
    if kind != "dense":
        raise ModelParseError(f"{where}.kind: unsupported layer kind {kind!r}")
    fin = _int(_field(d, "in_features", where), f"{where}.in_features")
    fout = _int(_field(d, "out_features", where), f"{where}.out_features")
    if fin < 1 or fout < 1:
        raise ValidationError(f"layer {name!r} ({where}): feature counts must be >= 1")
    act = _dtype(d.get("act_dtype", "i8"), f"{where}.act_dtype")
    wgt = _dtype(d.get("wgt_dtype", "i8"), f"{where}.wgt_dtype")
    acc = _dtype(d.get("acc_dtype", DEFAULT_ACC.get((act, wgt), IntDType.i32).name), f"{where}.acc_dtype")
    out = _dtype(d.get("out_dtype", DEFAULT_OUT.get((act, wgt), act).name), f"{where}.out_dtype")
    layer = QuantLayer(
        kind="dense", name=name, in_features=fin, out_features=fout,
        act_dtype=act, wgt_dtype=wgt, acc_dtype=acc, out_dtype=out,
        shift=_int(d.get("shift", 0), f"{where}.shift"),
        use_bias=_bool(d.get("use_bias", False), f"{where}.use_bias"),
        use_relu=_bool(d.get("use_relu", False), f"{where}.use_relu"),
        weight_frac=_int(d.get("weight_frac", 0), f"{where}.weight_frac"),
    )
    if "weights" in d:
        layer.weights = _tensor(d["weights"], (fout, fin), wgt, blob, f"{where}.weights")
    elif "weights_float" in d:
        try:
            wf = np.array(d["weights_float"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ModelParseError(f"{where}.weights_float: not a numeric matrix") from None
        if wf.shape != (fout, fin):
            raise ModelParseError(f"{where}.weights_float: expected shape {[fout, fin]}, got {list(wf.shape)}")
        layer.weights_float = wf
    else:
        raise ModelParseError(f"{where}: missing field 'weights'")
    if "bias" in d and d["bias"] is not None:
        layer.bias = _tensor(d["bias"], (fout,), acc, blob, f"{where}.bias")
    return layer


def parse_model(file_bytes: bytes | str, blob: bytes | None = None,
                device: DeviceDesc | None = None) -> QuantModel:
    """Parse and validate a model file; see the module docstring for the format."""
    try:
        doc = json.loads(file_bytes)
    except json.JSONDecodeError as e:
        raise ModelParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ModelParseError("line 1: model file must contain a JSON object")
    name = str(_field(doc, "name", "model"))
    shape = _field(doc, "input_shape", "model")
    if not isinstance(shape, list) or not shape or not all(isinstance(x, int) and x >= 1 for x in shape):
        raise ModelParseError("model.input_shape: expected a list of positive integers")
    layers_doc = _field(doc, "layers", "model")
    if not isinstance(layers_doc, list):
        raise ModelParseError("model.layers: expected a list")
    model = QuantModel(
        name=name,
        input_shape=list(shape),
        input_shift=_int(doc.get("input_shift", 0), "model.input_shift"),
        layers=[_parse_layer(d, i, blob) for i, d in enumerate(layers_doc)],
    )
    validate_model(model, device)
    return model


def activation_shapes(model: QuantModel) -> list[list[int]]:
    """Activation shape entering each layer, plus the final output shape."""
    shapes = [list(model.input_shape)]
    cur = list(model.input_shape)
    for i, layer in enumerate(model.layers):
        where = f"layer {layer.name!r} (layers[{i}])"
        if layer.kind == "reshape":
            tgt = reshape_target(layer.reshape_spec)
            if int(np.prod(tgt)) != int(np.prod(cur)):
                raise ValidationError(f"{where} reshape_spec: {cur} cannot be reshaped to {tgt}")
            cur = tgt
        else:
            if len(cur) != 2:
                raise ValidationError(f"{where} in_features: dense layer needs a 2-D input, got {cur}")
            if cur[1] != layer.in_features:
                raise ValidationError(
                    f"{where} in_features: expected {cur[1]} from the previous layer, got {layer.in_features}")
            cur = [cur[0], layer.out_features]
        shapes.append(list(cur))
    return shapes


def validate_model(model: QuantModel, device: DeviceDesc | None = None):
    device = device or default_aieml_device()
    if not model.layers:
        raise ValidationError("model has no layers")
    if not model.dense_layers:
        raise ValidationError("model has no dense layers")
    if model.input_shift < 0:
        raise ValidationError("model.input_shift must be >= 0")
    activation_shapes(model)
    prev_out = None
    for i, layer in enumerate(model.layers):
        if layer.kind != "dense":
            continue
        where = f"layer {layer.name!r} (layers[{i}])"
        if layer.shift < 0:
            raise ValidationError(f"{where} shift: must be >= 0")
        if layer.weight_frac < 0:
            raise ValidationError(f"{where} weight_frac: must be >= 0")
        if not device.supports(layer.act_dtype, layer.wgt_dtype):
            raise ValidationError(
                f"{where} act_dtype/wgt_dtype: pair {layer.act_dtype.name}x{layer.wgt_dtype.name} "
                f"not supported by device {device.name}")
        if layer.acc_dtype.bits < 32:
            raise ValidationError(f"{where} acc_dtype: accumulator must be at least 32 bits")
        if layer.weights is not None:
            lo, hi = dtype_range(layer.wgt_dtype)
            if layer.weights.size and (layer.weights.min() < lo or layer.weights.max() > hi):
                raise ValidationError(f"{where} weights: entries outside {layer.wgt_dtype.name} range")
        if layer.use_bias and layer.bias is None:
            raise ValidationError(f"{where} bias: use_bias is set but no bias given")
        if layer.bias is not None:
            lo, hi = dtype_range(layer.acc_dtype)
            if layer.bias.min() < lo or layer.bias.max() > hi:
                raise ValidationError(f"{where} bias: entries outside {layer.acc_dtype.name} range")
        if prev_out is not None and prev_out.bits > layer.act_dtype.bits:
            raise ValidationError(
                f"{where} act_dtype: previous layer stores {prev_out.name}, which does not fit {layer.act_dtype.name}")
        prev_out = layer.out_dtype


# serialization ---------------------------------------------------------------

def _layer_dict(layer: QuantLayer) -> dict:
    if layer.kind == "reshape":
        return {"kind": "reshape", "name": layer.name, "reshape_spec": layer.reshape_spec}
    d = {
        "kind": "dense", "name": layer.name,
        "in_features": layer.in_features, "out_features": layer.out_features,
        "act_dtype": layer.act_dtype.name, "wgt_dtype": layer.wgt_dtype.name,
        "acc_dtype": layer.acc_dtype.name, "out_dtype": layer.out_dtype.name,
        "shift": layer.shift, "use_bias": layer.use_bias, "use_relu": layer.use_relu,
        "weight_frac": layer.weight_frac,
    }
    if layer.weights is not None:
        d["weights"] = layer.weights.tolist()
    else:
        d["weights_float"] = layer.weights_float.tolist()
    if layer.bias is not None:
        d["bias"] = layer.bias.tolist()
    return d


def model_to_dict(model: QuantModel) -> dict:
    return {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "input_shift": model.input_shift,
        "layers": [_layer_dict(l) for l in model.layers],
    }


def serialize_model(model: QuantModel) -> bytes:
    """Canonical JSON encoding (inline tensors); ``parse_model`` inverts it."""
    return (json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n").encode()


def dense_model(name: str, rows: int, widths: list[int], rng: np.random.Generator,
                act="i8", wgt="i8", out=None, shift: int = 7, relu: bool = True, bias: bool = True,
                dtypes: list[tuple[str, str, str]] | None = None) -> QuantModel:
    """Random fully-connected chain ``widths[0] -> widths[1] -> ...``.

    ``dtypes`` optionally gives (act, wgt, out) per layer for mixed precision.
    Weights are drawn over the full weight range; biases are small so that
    outputs land on both sides of the saturation limits.
    """
    layers = []
    for i, (fin, fout) in enumerate(zip(widths[:-1], widths[1:])):
        a, w, o = dtypes[i] if dtypes else (act, wgt, out)
        a, w = IntDType.parse(a), IntDType.parse(w)
        o = IntDType.parse(o) if o else DEFAULT_OUT[(a, w)]
        acc = DEFAULT_ACC[(a, w)]
        wlo, whi = dtype_range(w)
        blo, bhi = dtype_range(acc)
        layers.append(QuantLayer(
            kind="dense", name=f"fc{i}", in_features=fin, out_features=fout,
            weights=rng.integers(wlo, whi + 1, size=(fout, fin), dtype=np.int64),
            bias=rng.integers(max(blo, -(1 << 16)), min(bhi, 1 << 16), size=fout, dtype=np.int64) if bias else None,
            act_dtype=a, wgt_dtype=w, acc_dtype=acc, out_dtype=o,
            shift=shift, use_bias=bias, use_relu=relu,
        ))
    return QuantModel(name=name, input_shape=[rows, widths[0]], layers=layers)
