"""Block-quantization codec and throughput benchmark toolkit.

Quantizes synthetic transformer weights into packed block formats
(optionally importance-weighted), runs them through deterministic
matvec/matmul kernels inside a prefill/decode simulation, and reports
throughput, roofline classification, memory footprints, and Pareto
trade-offs.
"""

from .bench import (
    BenchRecord,
    BenchSummary,
    HardwareProfile,
    MathError,
    RooflinePoint,
    analytic_decode_intensity,
    analytic_prefill_intensity,
    classify_bound,
    degradation_comm,
    degradation_comp,
    measure_peak_resident,
    memory_footprint,
    operational_intensity,
    run_benchmark,
)
from .codecs import (
    QuantizedTensor,
    Scheme,
    bpw,
    dequantize_tensor,
    layout_for,
    parse_scheme,
    quantize_tensor,
    read_container,
    round_trip_rmse,
    write_container,
)
from .errors import (
    CapabilityError,
    CodecError,
    DataError,
    IoError,
    QbenchError,
    ResourceError,
    UsageError,
)
from .imatrix import (
    ImportanceMatrix,
    accumulate,
    accumulate_batch,
    block_weights,
    read_imatrix,
    weighted_affine_fit,
    write_imatrix,
)
from .kernels import (
    KernelMode,
    KvCacheAccount,
    QuantizedModel,
    build_quantized_model,
    gemm_quant,
    gemv_quant,
    simulate_decode,
    simulate_prefill,
)
from .report import (
    ParetoPoint,
    ReportRow,
    ReportTable,
    emit_csv,
    emit_json,
    parse_csv,
    pareto_frontier,
    sweep,
)
from .tensor import DenseTensor, ModelConfig, Role, TensorShape, Workload, make_model

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "BenchSummary",
    "CapabilityError",
    "CodecError",
    "DataError",
    "DenseTensor",
    "HardwareProfile",
    "ImportanceMatrix",
    "IoError",
    "KernelMode",
    "KvCacheAccount",
    "MathError",
    "ModelConfig",
    "ParetoPoint",
    "QbenchError",
    "QuantizedModel",
    "QuantizedTensor",
    "ReportRow",
    "ReportTable",
    "ResourceError",
    "Role",
    "RooflinePoint",
    "Scheme",
    "TensorShape",
    "UsageError",
    "Workload",
    "accumulate",
    "accumulate_batch",
    "analytic_decode_intensity",
    "analytic_prefill_intensity",
    "block_weights",
    "bpw",
    "build_quantized_model",
    "classify_bound",
    "degradation_comm",
    "degradation_comp",
    "dequantize_tensor",
    "emit_csv",
    "emit_json",
    "gemm_quant",
    "gemv_quant",
    "layout_for",
    "make_model",
    "measure_peak_resident",
    "memory_footprint",
    "operational_intensity",
    "pareto_frontier",
    "parse_csv",
    "parse_scheme",
    "quantize_tensor",
    "read_container",
    "read_imatrix",
    "round_trip_rmse",
    "run_benchmark",
    "simulate_decode",
    "simulate_prefill",
    "sweep",
    "weighted_affine_fit",
    "write_container",
    "write_imatrix",
]
