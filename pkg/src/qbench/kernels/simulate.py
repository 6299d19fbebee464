"""Prefill/decode simulation over a synthetic transformer layer stack.

Each layer runs its seven projections through the quantized kernels:
q/k/v projections, an attention mix against the 16-bit KV cache (scaled
dot products, no softmax: throughput characterization needs the
memory/FLOP profile of attention, not model quality), the output
projection, and the w1/w3/w2 feed-forward pair with an elementwise gate.
RMS normalization after the attention and feed-forward blocks keeps
activations finite across arbitrarily deep stacks.

Prefill processes all input tokens as one batched pass per projection
(weights unpacked once, amortized over the batch).  Decode generates
tokens one at a time, so every weight byte is re-traversed per token;
that asymmetry is the whole point of the phase split.

Timing is measured, never modeled.  FLOP and byte counters are the
opposite: integer-exact closed forms of (config, scheme, token counts),
independent of the clock.  Per run of T tokens starting from a cache of
T0:

    flops            = 2 * param_count * T          (both phases)
    prefill bytes    = payload + 4*T*acts + 2*kv_bpt*T
    decode bytes     = T*payload + 4*T*acts + kv_bpt*T
                       + kv_bpt*(T*T0 + T*(T+1)/2)

where ``payload`` is the serialized weight-byte total, ``acts`` counts
one float32 activation read of each projection's input plus one write of
its output (rows + cols per weight tensor), and ``kv_bpt`` is the 16-bit
KV-cache bytes per token (2 * n_layers * d_model * 2).  Decode reads the
whole cached prefix per generated token; prefill reads each cached
vector once.

Each phase allocates its own cache buffers sized to its final token
count and zero-fills them so every page is resident; the lightweight
``KvCacheAccount`` carries the token count between phases.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..bench import BenchRecord, RssSampler
from ..codecs.schemes import Scheme, layout_for
from ..codecs.tensorops import QuantizedTensor, dequantize_tensor, quantize_tensor
from ..errors import CapabilityError, DataError, ResourceError, UsageError
from ..tensor import (
    ModelConfig,
    _standard_normal,
    iter_model,
    model_tensor_plan,
)
from .gemv import KernelMode, gemm_quant, gemv_quant, resolve_workers

_LAYER_SUFFIXES = (
    "attention_wq",
    "attention_wk",
    "attention_wv",
    "attention_wo",
    "feed_forward_w1",
    "feed_forward_w3",
    "feed_forward_w2",
)

_PREFILL_STREAM = 101
_DECODE_STREAM = 202


@dataclass
class KvCacheAccount:
    """Byte accounting for the 16-bit KV cache; grows one token per step."""

    bytes_per_token: int
    tokens_cached: int = 0

    @classmethod
    def from_config(cls, config: ModelConfig) -> "KvCacheAccount":
        return cls(bytes_per_token=2 * config.n_layers * config.d_model * 2)

    @property
    def total_bytes(self) -> int:
        return self.bytes_per_token * self.tokens_cached

    def add(self, tokens: int) -> None:
        if tokens < 0:
            raise DataError(f"cannot cache {tokens} tokens")
        self.tokens_cached += tokens

    def reset(self) -> None:
        self.tokens_cached = 0


@dataclass
class QuantizedModel:
    """Every weight tensor of one model quantized under one scheme."""

    config: ModelConfig
    scheme: Scheme
    seed: int
    tensors: tuple[QuantizedTensor, ...]
    _by_name: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.tensors = tuple(self.tensors)
        self._by_name = {t.name: t for t in self.tensors}
        if len(self._by_name) != len(self.tensors):
            raise DataError("quantized model has duplicate tensor names")

    def tensor(self, name: str) -> QuantizedTensor:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"model has no tensor named '{name}'") from None

    @property
    def payload_bytes(self) -> int:
        return sum(int(t.payload.size) for t in self.tensors)

    def layer_stack(self):
        """Per-layer projection tuples plus the final output tensor."""
        layers = [
            tuple(self.tensor(f"blk.{li}.{suffix}") for suffix in _LAYER_SUFFIXES)
            for li in range(self.config.n_layers)
        ]
        return layers, self.tensor("output")


def build_quantized_model(config: ModelConfig, scheme: Scheme, seed: int = 0,
                          weights_by_name: Optional[dict] = None) -> QuantizedModel:
    """Generate and quantize a synthetic model one tensor at a time.

    Dense tensors are discarded as soon as they are encoded, so peak
    memory stays near the quantized size plus one dense tensor.
    ``weights_by_name`` supplies optional importance weights per tensor
    name.
    """
    tensors = []
    try:
        for dense in iter_model(config, seed):
            w = None if weights_by_name is None else weights_by_name.get(dense.name)
            tensors.append(quantize_tensor(dense, scheme, w))
    except MemoryError as exc:
        raise ResourceError(
            f"out of memory quantizing model '{config.label}' under {scheme.name}"
        ) from exc
    return QuantizedModel(config=config, scheme=scheme, seed=seed, tensors=tuple(tensors))


def model_rmse(qm: QuantizedModel) -> float:
    """Round-trip RMSE over every weight of the model, in float64."""
    total_sq = 0.0
    total_n = 0
    for dense, qt in zip(iter_model(qm.config, qm.seed), qm.tensors):
        if dense.name != qt.name:
            raise DataError(f"tensor order mismatch: {dense.name} vs {qt.name}")
        back = dequantize_tensor(qt).values.astype(np.float64)
        diff = back - dense.values.astype(np.float64)
        total_sq += float(np.sum(diff * diff))
        total_n += dense.shape.size
    return math.sqrt(total_sq / total_n)


# --------------------------------------------------------------------------
# Exact counters


def predicted_payload_bytes(config: ModelConfig, scheme: Scheme) -> int:
    """Serialized weight bytes of a model, from layouts alone."""
    total = 0
    for _, role, shape, layer in model_tensor_plan(config):
        layout = layout_for(scheme, role, layer)
        n_groups = -(-shape.size // layout.group)
        total += n_groups * layout.group_bytes
    return total


def activation_elements(config: ModelConfig) -> int:
    """Float32 elements moved per token: each projection's input plus output."""
    return sum(shape.rows + shape.cols for _, _, shape, _ in model_tensor_plan(config))


def prefill_counters(config: ModelConfig, scheme: Scheme, input_len: int) -> tuple[int, int]:
    """(flops, bytes) for one prefill pass: weights touched once."""
    flops = 2 * config.param_count() * input_len
    kv_bpt = 2 * config.n_layers * config.d_model * 2
    data = (predicted_payload_bytes(config, scheme)
            + 4 * input_len * activation_elements(config)
            + 2 * kv_bpt * input_len)
    return flops, data


def decode_counters(config: ModelConfig, scheme: Scheme, output_len: int,
                    start_tokens: int = 0) -> tuple[int, int]:
    """(flops, bytes) for decoding output_len tokens after start_tokens cached."""
    t = output_len
    flops = 2 * config.param_count() * t
    kv_bpt = 2 * config.n_layers * config.d_model * 2
    kv_reads = kv_bpt * (t * start_tokens + t * (t + 1) // 2)
    data = (t * predicted_payload_bytes(config, scheme)
            + 4 * t * activation_elements(config)
            + kv_bpt * t
            + kv_reads)
    return flops, data


# --------------------------------------------------------------------------
# Forward passes


def _rms_vec(v: np.ndarray) -> np.ndarray:
    ss = float(np.dot(v, v)) / v.size
    return v * np.float32(1.0 / math.sqrt(ss + 1e-6))


def _rms_cols(h: np.ndarray) -> np.ndarray:
    ss = np.mean(h * h, axis=0)
    return h * (np.float32(1.0) / np.sqrt(ss + np.float32(1e-6)))


def _alloc_kv_buffers(config: ModelConfig, capacity: int):
    """One (K, V) float16 pair per layer, zero-filled so pages are resident."""
    bufs = []
    for _ in range(config.n_layers):
        k = np.empty((capacity, config.d_model), dtype=np.float16)
        v = np.empty((capacity, config.d_model), dtype=np.float16)
        k.fill(0)
        v.fill(0)
        bufs.append((k, v))
    return bufs


def _token_inputs(config: ModelConfig, count: int, seed: int, stream: int) -> np.ndarray:
    seq = np.random.SeedSequence((seed, stream))
    vals = _standard_normal(seq, count * config.d_model).astype(np.float32)
    return vals.reshape(count, config.d_model)


def _run_prefill_pass(qm: QuantizedModel, inputs: np.ndarray, kv_bufs,
                      mode: KernelMode, workers: int) -> np.ndarray:
    config = qm.config
    layers, out_tensor = qm.layer_stack()
    batch = inputs.shape[1]
    score_scale = np.float32(1.0 / (batch * math.sqrt(config.d_model)))
    h = inputs
    for li in range(config.n_layers):
        wq, wk, wv, wo, w1, w3, w2 = layers[li]
        k_buf, v_buf = kv_bufs[li]
        q = gemm_quant(wq, h, mode=mode, workers=workers)
        k = gemm_quant(wk, h, mode=mode, workers=workers)
        v = gemm_quant(wv, h, mode=mode, workers=workers)
        k_buf[:batch] = k.T
        v_buf[:batch] = v.T
        keys = k_buf[:batch].astype(np.float32)
        scores = keys @ q
        scores *= score_scale
        ctx = v_buf[:batch].astype(np.float32).T @ scores
        h = _rms_cols(gemm_quant(wo, ctx, mode=mode, workers=workers))
        gate = gemm_quant(w1, h, mode=mode, workers=workers)
        up = gemm_quant(w3, h, mode=mode, workers=workers)
        h = _rms_cols(gemm_quant(w2, gate * up, mode=mode, workers=workers))
    return gemm_quant(out_tensor, h, mode=mode, workers=workers)


def _run_decode_pass(qm: QuantizedModel, inputs: np.ndarray, kv_bufs, start_tokens: int,
                     mode: KernelMode, workers: int) -> np.ndarray:
    config = qm.config
    layers, out_tensor = qm.layer_stack()
    inv_sqrt_d = 1.0 / math.sqrt(config.d_model)
    logits = None
    for i in range(inputs.shape[0]):
        x = inputs[i]
        t = start_tokens + i
        for li in range(config.n_layers):
            wq, wk, wv, wo, w1, w3, w2 = layers[li]
            k_buf, v_buf = kv_bufs[li]
            q = gemv_quant(wq, x, mode=mode, workers=workers)
            k_buf[t] = gemv_quant(wk, x, mode=mode, workers=workers)
            v_buf[t] = gemv_quant(wv, x, mode=mode, workers=workers)
            keys = k_buf[: t + 1].astype(np.float32)
            scores = keys @ q
            scores *= np.float32(inv_sqrt_d / (t + 1))
            ctx = v_buf[: t + 1].astype(np.float32).T @ scores
            x = _rms_vec(gemv_quant(wo, ctx, mode=mode, workers=workers))
            gate = gemv_quant(w1, x, mode=mode, workers=workers)
            up = gemv_quant(w3, x, mode=mode, workers=workers)
            x = _rms_vec(gemv_quant(w2, gate * up, mode=mode, workers=workers))
        logits = gemv_quant(out_tensor, x, mode=mode, workers=workers)
    return logits


# --------------------------------------------------------------------------
# Timed phase runs


def _resolve_model(model, scheme: Optional[Scheme], seed: int) -> QuantizedModel:
    if isinstance(model, QuantizedModel):
        if scheme is not None and scheme != model.scheme:
            raise UsageError(
                f"scheme {scheme.name} does not match the quantized model's "
                f"{model.scheme.name}"
            )
        return model
    if isinstance(model, ModelConfig):
        if scheme is None:
            raise UsageError("a bare model config needs an explicit scheme")
        return build_quantized_model(model, scheme, seed=seed)
    raise UsageError(f"expected ModelConfig or QuantizedModel, got {type(model).__name__}")


def _start_sampler() -> Optional[RssSampler]:
    try:
        return RssSampler().start()
    except CapabilityError:
        return None


def _timed_run(run, phase: str) -> tuple[float, float, Optional[int]]:
    sampler = _start_sampler()
    cpu0 = time.process_time()
    wall0 = time.perf_counter()
    try:
        run()
    except MemoryError as exc:
        raise ResourceError(f"out of memory during {phase} run") from exc
    finally:
        peak = sampler.stop() if sampler is not None else None
    wall = time.perf_counter() - wall0
    cpu = time.process_time() - cpu0
    return wall, cpu, peak


def simulate_prefill(model, scheme: Optional[Scheme] = None, input_len: int = 1, *,
                     kv: Optional[KvCacheAccount] = None, seed: int = 0,
                     trial_index: int = 0, workers: Optional[int] = None,
                     mode: KernelMode = KernelMode.UNPACK_THEN_COMPUTE) -> BenchRecord:
    """Batched pass over input_len synthetic tokens; fills the KV cache.

    Wall and CPU time are measured around the pass; flop/byte counters
    come from the closed forms in the module docstring and are identical
    across runs with equal (config, scheme, input_len).
    """
    if input_len < 1:
        raise UsageError(f"input_len must be >= 1, got {input_len}")
    qm = _resolve_model(model, scheme, seed)
    if kv is None:
        kv = KvCacheAccount.from_config(qm.config)
    if kv.tokens_cached != 0:
        raise UsageError(
            f"prefill needs an empty KV cache, got {kv.tokens_cached} tokens cached"
        )
    eff_workers = resolve_workers(workers)
    inputs = _token_inputs(qm.config, input_len, seed, _PREFILL_STREAM).T.copy()

    def run() -> None:
        kv_bufs = _alloc_kv_buffers(qm.config, input_len)
        _run_prefill_pass(qm, inputs, kv_bufs, mode, eff_workers)

    wall, cpu, peak = _timed_run(run, "prefill")
    kv.add(input_len)
    flops, data = prefill_counters(qm.config, qm.scheme, input_len)
    return BenchRecord(phase="prefill", tokens=input_len, wall_time=wall,
                       flops=flops, bytes=data, peak_resident_bytes=peak,
                       cpu_time=cpu, workers=eff_workers, trial_index=trial_index)


def simulate_decode(model, scheme: Optional[Scheme] = None, output_len: int = 1,
                    kv: Optional[KvCacheAccount] = None, *, seed: int = 0,
                    trial_index: int = 0, workers: Optional[int] = None,
                    mode: KernelMode = KernelMode.UNPACK_THEN_COMPUTE) -> BenchRecord:
    """Sequential single-token passes; weights re-traversed every token.

    The KV cache grows by one token per step and each step attends over
    the full prefix, so byte counts grow quadratically in output_len on
    top of the linear weight streaming.
    """
    if output_len < 1:
        raise UsageError(f"output_len must be >= 1, got {output_len}")
    qm = _resolve_model(model, scheme, seed)
    if kv is None:
        kv = KvCacheAccount.from_config(qm.config)
    start_tokens = kv.tokens_cached
    eff_workers = resolve_workers(workers)
    inputs = _token_inputs(qm.config, output_len, seed, _DECODE_STREAM)

    def run() -> None:
        kv_bufs = _alloc_kv_buffers(qm.config, start_tokens + output_len)
        _run_decode_pass(qm, inputs, kv_bufs, start_tokens, mode, eff_workers)

    wall, cpu, peak = _timed_run(run, "decode")
    kv.add(output_len)
    flops, data = decode_counters(qm.config, qm.scheme, output_len, start_tokens)
    return BenchRecord(phase="decode", tokens=output_len, wall_time=wall,
                       flops=flops, bytes=data, peak_resident_bytes=peak,
                       cpu_time=cpu, workers=eff_workers, trial_index=trial_index)
