"""Quantized matvec/matmul kernels and the prefill/decode simulator."""

from .gemv import KernelMode, gemm_quant, gemv_quant
from .simulate import (
    KvCacheAccount,
    QuantizedModel,
    build_quantized_model,
    simulate_decode,
    simulate_prefill,
)

__all__ = [
    "KernelMode",
    "KvCacheAccount",
    "QuantizedModel",
    "build_quantized_model",
    "gemm_quant",
    "gemv_quant",
    "simulate_decode",
    "simulate_prefill",
]
