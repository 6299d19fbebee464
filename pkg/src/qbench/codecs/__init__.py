"""Quantization codecs: scalar reference ops, packed block formats, container I/O."""

from .scalar import dequantize, quantize_asymmetric, quantize_symmetric
from .schemes import BlockLayout, Scheme, bpw, layout_for, parse_scheme, role_table
from .packing import pack_codes, unpack_codes
from .tensorops import (
    QuantizedTensor,
    dequantize_padded,
    dequantize_tensor,
    quantize_model,
    quantize_tensor,
    round_trip_rmse,
)
from .container import read_container, write_container

__all__ = [
    "BlockLayout",
    "QuantizedTensor",
    "Scheme",
    "bpw",
    "dequantize",
    "dequantize_padded",
    "dequantize_tensor",
    "quantize_model",
    "layout_for",
    "pack_codes",
    "parse_scheme",
    "quantize_asymmetric",
    "quantize_symmetric",
    "quantize_tensor",
    "read_container",
    "role_table",
    "round_trip_rmse",
    "unpack_codes",
    "write_container",
]
