"""Compile quantized MLPs onto a 2D tile-array accelerator model.

The pipeline lowers a model to an IR, resolves per-layer tiling and cascade
rectangles, packs weights, plans memory-tile buffers, places the rectangles
and emits a plan that :func:`simulate` runs bit-exactly.
"""

from .compiler import compile_model
from .device import DeviceDesc, IntDType, default_aieml_device, load_device
from .errors import AieMapError, InfeasibleError, InvariantViolation, ValidationError
from .frontend import QuantLayer, QuantModel, parse_model
from .ir import UserConfig, load_config
from .plan import CompiledPlan, load_plan
from .simulate import dequantize_io, quantize_io, simulate

__all__ = [
    "AieMapError", "CompiledPlan", "DeviceDesc", "InfeasibleError", "IntDType", "InvariantViolation",
    "QuantLayer", "QuantModel", "UserConfig", "ValidationError", "compile_model", "default_aieml_device",
    "dequantize_io", "load_config", "load_device", "load_plan", "parse_model", "quantize_io", "simulate",
]
