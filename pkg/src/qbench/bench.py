"""Benchmark protocol: timed trials, throughput stats, and resource accounting.

The measurement contract, in one place:

* A trial is one prefill pass plus one decode pass over a fresh KV cache.
  ``run_benchmark`` executes ``warmup`` discarded trials followed by
  ``trials`` measured ones and reports mean/std of tokens-per-second per
  phase.  Warmup records carry negative ``trial_index`` so downstream
  consumers can always tell them apart.
* Wall time comes from a monotonic clock and is measured, not modeled;
  ``cpu_time`` is recorded separately as the portable stand-in for power
  instrumentation.  FLOP and byte counters are integer-exact functions of
  (model config, scheme, token counts) and never depend on timing.
* Exactly one timing-bearing benchmark runs at a time (module-level lock).
  The only concurrent observer is the resident-set sampler, which reads
  process statistics at ~50 Hz, comfortably above its 10 Hz floor.
* A trial that dies mid-run is retried once with a bumped seed; a second
  failure aborts the cell and the error propagates to the caller.

Footprint prediction mirrors what a run actually keeps resident: the sum
of quantized weight payloads, the KV cache at its maximum token count,
and a fixed runtime baseline calibrated once per process by sampling an
empty run.  ``predicted_weight_kv_bytes`` exposes the baseline-free part,
which is the hard lower bound on measured peak RSS.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from statistics import fmean, pstdev
from typing import Callable, Optional, Union

import psutil

from .codecs.schemes import Scheme, bpw
from .errors import CapabilityError, DataError, QbenchError, UsageError
from .tensor import ModelConfig, Workload

PHASES = ("prefill", "decode")

BOUND_COMPUTE = "compute"
BOUND_COMMUNICATION = "communication"


class MathError(DataError):
    """A ratio or intensity was requested with a degenerate denominator."""


@dataclass
class BenchRecord:
    """One measured phase of one trial."""

    phase: str
    tokens: int
    wall_time: float
    flops: int
    bytes: int
    peak_resident_bytes: Optional[int]
    cpu_time: float
    workers: int
    trial_index: int

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise DataError(f"record phase must be one of {PHASES}, got {self.phase!r}")
        if self.tokens < 1:
            raise DataError(f"record tokens must be >= 1, got {self.tokens}")
        if not self.wall_time > 0:
            raise DataError(f"record wall_time must be > 0, got {self.wall_time}")
        if self.workers < 1:
            raise DataError(f"record workers must be >= 1, got {self.workers}")

    @property
    def tps(self) -> float:
        return self.tokens / self.wall_time


@dataclass
class BenchSummary:
    """Per-phase throughput statistics for one benchmark cell."""

    scheme: str
    model: str
    phase: str
    input_len: int
    output_len: int
    tps_mean: float
    tps_std: float
    warmup_count: int
    trial_count: int

    def __post_init__(self) -> None:
        if self.trial_count < 1:
            raise DataError(f"summary trial_count must be >= 1, got {self.trial_count}")
        if self.warmup_count < 0:
            raise DataError(f"summary warmup_count must be >= 0, got {self.warmup_count}")


@dataclass(frozen=True)
class HardwareProfile:
    """Peak rates used by the roofline classifier."""

    peak_flops_per_s: float
    mem_bandwidth_bytes_per_s: float
    cores: int

    def __post_init__(self) -> None:
        if not self.peak_flops_per_s > 0:
            raise UsageError(f"peak_flops_per_s must be > 0, got {self.peak_flops_per_s}")
        if not self.mem_bandwidth_bytes_per_s > 0:
            raise UsageError(
                f"mem_bandwidth_bytes_per_s must be > 0, got {self.mem_bandwidth_bytes_per_s}"
            )
        if self.cores < 1:
            raise UsageError(f"cores must be >= 1, got {self.cores}")

    @property
    def balance(self) -> float:
        """Machine balance point in flops per byte."""
        return self.peak_flops_per_s / self.mem_bandwidth_bytes_per_s


@dataclass(frozen=True)
class RooflinePoint:
    operational_intensity: float
    bound: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.operational_intensity) or self.operational_intensity < 0:
            raise DataError(
                f"operational intensity must be finite and >= 0, "
                f"got {self.operational_intensity}"
            )
        if self.bound not in (BOUND_COMPUTE, BOUND_COMMUNICATION):
            raise DataError(f"unknown bound {self.bound!r}")


# --------------------------------------------------------------------------
# Resident-set sampling


_SAMPLE_INTERVAL_S = 0.02


class RssSampler:
    """Background thread that tracks peak resident-set size during a run.

    ``start`` probes the platform once before spawning the thread, so an
    unsupported platform fails fast with a capability error instead of a
    dead sampler silently reporting zero.
    """

    def __init__(self, interval_s: float = _SAMPLE_INTERVAL_S) -> None:
        self.interval_s = interval_s
        self.peak = 0
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    @staticmethod
    def _probe() -> int:
        try:
            return psutil.Process().memory_info().rss
        except Exception as exc:
            raise CapabilityError(f"resident-set sampling unavailable: {exc}") from exc

    def start(self) -> "RssSampler":
        self.peak = self._probe()
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def _loop(self) -> None:
        proc = psutil.Process()
        while not self._stop.wait(self.interval_s):
            try:
                rss = proc.memory_info().rss
            except Exception:
                return
            if rss > self.peak:
                self.peak = rss

    def stop(self) -> int:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        try:
            final = self._probe()
        except CapabilityError:
            final = 0
        return max(self.peak, final)


def measure_peak_resident(run: Callable[[], object]) -> int:
    """Run a callable while sampling RSS at ~50 Hz; return the peak in bytes.

    Raises a capability error when the platform exposes no resident-set
    statistics; callers then fall back to predicted-only footprints.
    """
    sampler = RssSampler().start()
    try:
        run()
    finally:
        peak = sampler.stop()
    return peak


_BASELINE_LOCK = threading.Lock()
_BASELINE_BYTES: Optional[int] = None


def runtime_baseline_bytes(recalibrate: bool = False) -> int:
    """Fixed runtime overhead constant: peak RSS of an empty run.

    Calibrated at most once per process and cached; pass ``recalibrate``
    to re-measure after large one-time allocations (compiled kernels,
    say) would stale the cache.  A platform without RSS sampling
    calibrates to zero, which keeps predictions pure lower bounds.
    """
    global _BASELINE_BYTES
    with _BASELINE_LOCK:
        if _BASELINE_BYTES is None or recalibrate:
            try:
                _BASELINE_BYTES = measure_peak_resident(lambda: None)
            except CapabilityError:
                _BASELINE_BYTES = 0
        return _BASELINE_BYTES


# --------------------------------------------------------------------------
# Ratios and roofline math


def _degradation(reference: float, other: float, what: str) -> float:
    if not reference > 0:
        raise MathError(f"{what}: reference throughput must be > 0, got {reference}")
    return (reference - other) / reference


def degradation_comm(t_low_bpw: float, t_fp16: float) -> float:
    """Decode slowdown of FP16 relative to a low-BPW scheme.

    (t_low − t_fp16) / t_low; positive when the low-BPW scheme is faster,
    negative when FP16 wins.
    """
    return _degradation(t_low_bpw, t_fp16, "degradation_comm")


def degradation_comp(t_64: float, t_512: float) -> float:
    """Prefill slowdown of a long input relative to a short one.

    (t_64 − t_512) / t_64 for per-token throughput at input lengths 64
    and 512.
    """
    return _degradation(t_64, t_512, "degradation_comp")


def operational_intensity(record: BenchRecord) -> float:
    """Flops per byte for one record; zero flops means zero intensity."""
    if record.flops == 0:
        return 0.0
    if record.bytes <= 0:
        raise MathError(f"operational intensity needs bytes > 0, got {record.bytes}")
    return record.flops / record.bytes


def analytic_decode_intensity(bits_per_weight: Union[Fraction, int, float]) -> Fraction:
    """Exact decode intensity of the weight-streaming model: 16 / BPW.

    Per generated token the model reads every weight once (BPW/8 bytes
    per weight) and spends 2 flops per weight, so the weight-dominated
    intensity is 2 / (BPW/8) = 16/BPW flops per byte.
    """
    b = Fraction(bits_per_weight)
    if b <= 0:
        raise MathError(f"bits per weight must be > 0, got {bits_per_weight}")
    return Fraction(16, 1) / b


def analytic_prefill_intensity(
    bits_per_weight: Union[Fraction, int, float], input_len: int
) -> Fraction:
    """Exact prefill intensity: weights amortize over the batch, OI = 16·B / BPW."""
    if input_len < 1:
        raise MathError(f"input_len must be >= 1, got {input_len}")
    return analytic_decode_intensity(bits_per_weight) * input_len


def classify_bound(oi: Union[float, Fraction], hw: HardwareProfile) -> RooflinePoint:
    """Roofline classification; intensities at the balance point count as compute."""
    bound = BOUND_COMPUTE if oi >= hw.balance else BOUND_COMMUNICATION
    return RooflinePoint(float(oi), bound)


# --------------------------------------------------------------------------
# Footprint prediction


def _resolve_config_scheme(model, scheme: Optional[Scheme]):
    from .kernels.simulate import QuantizedModel

    if isinstance(model, QuantizedModel):
        if scheme is not None and scheme != model.scheme:
            raise UsageError(
                f"scheme {scheme.name} does not match the quantized model's "
                f"{model.scheme.name}"
            )
        return model.config, model.scheme
    if isinstance(model, ModelConfig):
        if scheme is None:
            raise UsageError("a bare model config needs an explicit scheme")
        return model, scheme
    raise UsageError(f"expected ModelConfig or QuantizedModel, got {type(model).__name__}")


def predicted_weight_kv_bytes(model, scheme: Optional[Scheme] = None,
                              workload: Optional[Workload] = None) -> int:
    """Exact bytes a run keeps resident for weights plus the full KV cache."""
    from .kernels.simulate import KvCacheAccount, predicted_payload_bytes

    config, scheme = _resolve_config_scheme(model, scheme)
    if workload is None:
        raise UsageError("footprint prediction needs a workload")
    kv = KvCacheAccount.from_config(config)
    tokens = workload.input_len + workload.output_len
    return predicted_payload_bytes(config, scheme) + kv.bytes_per_token * tokens


def memory_footprint(model, scheme: Optional[Scheme] = None,
                     workload: Optional[Workload] = None) -> int:
    """Predicted peak bytes: weights + KV at max tokens + runtime baseline."""
    return predicted_weight_kv_bytes(model, scheme, workload) + runtime_baseline_bytes()


# --------------------------------------------------------------------------
# The trial protocol

_BENCH_LOCK = threading.Lock()


def _summarize(records: list[BenchRecord], scheme_name: str, model_label: str,
               workload: Workload, warmup: int) -> BenchSummary:
    tps = [r.tps for r in records]
    return BenchSummary(
        scheme=scheme_name,
        model=model_label,
        phase=records[0].phase,
        input_len=workload.input_len,
        output_len=workload.output_len,
        tps_mean=fmean(tps),
        tps_std=pstdev(tps),
        warmup_count=warmup,
        trial_count=len(records),
    )


def run_benchmark(model, scheme: Optional[Scheme] = None,
                  workload: Optional[Workload] = None, warmup: int = 3,
                  trials: int = 3, seed: Optional[int] = None,
                  workers: Optional[int] = None, mode=None,
                  records_out: Optional[list] = None) -> dict[str, BenchSummary]:
    """Run the full trial protocol for one (model, scheme, workload) cell.

    Returns one summary per phase, keyed "prefill" and "decode".  The KV
    cache is rebuilt from scratch before every trial, warmup trials are
    excluded from the statistics (their records carry negative
    trial_index), and every record lands in ``records_out`` when given,
    warmups included.

    ``seed`` defaults to the workload's seed and drives both the weight
    generation (when ``model`` is a bare config) and the activation
    streams.  A failed trial is retried once with seed+1; a second
    failure propagates.  ``tps_std`` is the population deviation, so a
    single trial reports exactly 0.
    """
    from .kernels.gemv import KernelMode, resolve_workers
    from .kernels.simulate import (
        KvCacheAccount,
        QuantizedModel,
        build_quantized_model,
        simulate_decode,
        simulate_prefill,
    )

    if workload is None:
        raise UsageError("run_benchmark needs a workload")
    if trials < 1:
        raise UsageError(f"trials must be >= 1, got {trials}")
    if warmup < 0:
        raise UsageError(f"warmup must be >= 0, got {warmup}")
    run_seed = workload.seed if seed is None else seed
    if mode is None:
        mode = KernelMode.UNPACK_THEN_COMPUTE

    if isinstance(model, QuantizedModel):
        if scheme is not None and scheme != model.scheme:
            raise UsageError(
                f"scheme {scheme.name} does not match the quantized model's "
                f"{model.scheme.name}"
            )
        qm = model
    else:
        if scheme is None:
            raise UsageError("a bare model config needs an explicit scheme")
        qm = build_quantized_model(model, scheme, seed=run_seed)

    eff_workers = resolve_workers(workers)

    def one_trial(trial_seed: int, trial_index: int):
        kv = KvCacheAccount.from_config(qm.config)
        pre = simulate_prefill(qm, input_len=workload.input_len, kv=kv,
                               seed=trial_seed, trial_index=trial_index,
                               workers=eff_workers, mode=mode)
        dec = simulate_decode(qm, output_len=workload.output_len, kv=kv,
                              seed=trial_seed, trial_index=trial_index,
                              workers=eff_workers, mode=mode)
        return pre, dec

    measured: dict[str, list[BenchRecord]] = {p: [] for p in PHASES}
    with _BENCH_LOCK:
        for k in range(warmup + trials):
            trial_index = k - warmup
            try:
                pre, dec = one_trial(run_seed, trial_index)
            except UsageError:
                raise
            except QbenchError:
                pre, dec = one_trial(run_seed + 1, trial_index)
            if records_out is not None:
                records_out.extend((pre, dec))
            if trial_index >= 0:
                measured["prefill"].append(pre)
                measured["decode"].append(dec)

    return {
        phase: _summarize(measured[phase], qm.scheme.name, qm.config.label,
                          workload, warmup)
        for phase in PHASES
    }
