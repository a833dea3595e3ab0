import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiemap.device import IntDType
from aiemap.errors import ModelParseError, ValidationError
from aiemap.frontend import (
    activation_shapes, dense_model, mixer_reshape, model_to_dict, parse_model, quantize_float_weights,
    serialize_model,
)


def _dense(name, fin, fout, **kw):
    d = {"kind": "dense", "name": name, "in_features": fin, "out_features": fout,
         "weights": np.eye(fout, fin, dtype=int).tolist()}
    d.update(kw)
    return d


def _doc(layers, shape=(2, 4), **kw):
    return json.dumps({"name": "m", "input_shape": list(shape), "layers": layers, **kw})


def test_minimal_identity_model():
    m = parse_model(_doc([_dense("fc", 4, 4)]))
    assert len(m.layers) == 1
    assert np.array_equal(m.layers[0].weights, np.eye(4))
    assert m.layers[0].acc_dtype is IntDType.i32


def test_chaining_mismatch_names_layer_and_field():
    with pytest.raises(ValidationError, match=r"'b'.*in_features"):
        parse_model(_doc([_dense("a", 4, 8), _dense("b", 4, 4)]))


def test_seven_layer_mlp(rng):
    m = dense_model("mlp7", 1, [512] * 8, rng)
    m2 = parse_model(serialize_model(m))
    assert len(m2.dense_layers) == 7
    assert activation_shapes(m2)[-1] == [1, 512]


@pytest.mark.parametrize("text,msg", [
    ("{", "line 1"),
    ("[]", "JSON object"),
    (json.dumps({"input_shape": [1, 4], "layers": []}), "name"),
    (_doc([{"kind": "conv", "name": "c"}]), "unsupported layer kind"),
    (_doc([_dense("a", 4, 4, act_dtype="u8")]), "act_dtype"),
    (_doc([{"kind": "dense", "name": "a", "in_features": 4, "out_features": 4}]), "weights"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ModelParseError, match=msg):
        parse_model(text)


@pytest.mark.parametrize("layer,msg", [
    (_dense("a", 4, 4, weights=[[200] * 4] * 4), "weights: entries outside i8"),
    (_dense("a", 4, 4, use_bias=True), "bias"),
    (_dense("a", 4, 4, shift=-1), "shift"),
    (_dense("a", 4, 4, act_dtype="i8", wgt_dtype="i16"), "not supported"),
])
def test_validation_errors(layer, msg):
    with pytest.raises(ValidationError, match=msg):
        parse_model(_doc([layer]))


def test_narrowing_between_layers_is_rejected():
    a = _dense("a", 4, 4, act_dtype="i16", wgt_dtype="i16")
    b = _dense("b", 4, 4)
    with pytest.raises(ValidationError, match="act_dtype"):
        parse_model(_doc([a, b]))


def test_blob_tensors():
    w = np.arange(-8, 8, dtype=np.int8).reshape(4, 4)
    bias = np.array([1, -2, 3, -4], dtype=np.int32)
    blob = w.tobytes() + bias.astype("<i4").tobytes()
    layer = _dense("a", 4, 4, weights="@blob:0:16", bias="@blob:16:16", use_bias=True)
    m = parse_model(_doc([layer]), blob)
    assert np.array_equal(m.layers[0].weights, w)
    assert m.layers[0].bias.tolist() == [1, -2, 3, -4]
    with pytest.raises(ValidationError):
        parse_model(_doc([layer]), blob[:20])


@pytest.mark.parametrize("shape,mode,expected", [
    ([1, 196, 512], "token", [512, 196]),
    ([1, 196, 512], "channel", [196, 512]),
    ([1, 1, 1], "token", [1, 1]),
])
def test_mixer_reshape(shape, mode, expected):
    assert mixer_reshape(shape, mode) == expected


def test_mixer_reshape_rejects_bad_mode():
    with pytest.raises(ValidationError):
        mixer_reshape([1, 2, 3], "spatial")


def test_quantize_float_weights_examples(rng):
    assert np.array_equal(quantize_float_weights(np.zeros((3, 3)), IntDType.i8, 3), np.zeros((3, 3)))
    assert quantize_float_weights(np.array([[0.5]]), IntDType.i8, 1).tolist() == [[1]]
    w = rng.normal(0, 4, size=(4, 4))
    q = quantize_float_weights(w, IntDType.i8, 4)
    for v, got in zip(w.reshape(-1), q.reshape(-1)):
        # scaling by a power of two is exact; Fraction rounds half to even
        assert got == min(max(round(Fraction(float(v)) * 16), -128), 127)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_layers=st.integers(1, 3), bias=st.booleans(), relu=st.booleans())
def test_parse_serialize_round_trip(seed, n_layers, bias, relu):
    rng = np.random.default_rng(seed)
    widths = rng.integers(1, 24, size=n_layers + 1).tolist()
    m = dense_model("rt", int(rng.integers(1, 6)), widths, rng, relu=relu, bias=bias)
    text = serialize_model(m)
    m2 = parse_model(text)
    assert serialize_model(m2) == text
    assert model_to_dict(m2) == model_to_dict(m)


def test_reshape_layer_checks_element_count():
    layers = [_dense("a", 4, 4), {"kind": "reshape", "name": "r", "reshape_spec": {"shape": [3, 3]}}]
    with pytest.raises(ValidationError, match="cannot be reshaped"):
        parse_model(_doc(layers))
