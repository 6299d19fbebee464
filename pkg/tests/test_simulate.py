"""Phase simulation: KV accounting, exact counters, and record contents."""

import numpy as np
import pytest

from qbench.codecs.schemes import Scheme, layout_for
from qbench.errors import DataError, UsageError
from qbench.kernels.gemv import KernelMode
from qbench.kernels.simulate import (
    KvCacheAccount,
    QuantizedModel,
    activation_elements,
    build_quantized_model,
    decode_counters,
    model_rmse,
    predicted_payload_bytes,
    prefill_counters,
    simulate_decode,
    simulate_prefill,
)
from qbench.tensor import ModelConfig, model_tensor_plan

TINY = ModelConfig(n_layers=2, d_model=32, d_ffn=48, n_heads=4, vocab_proxy=16, label="tiny")


def test_kv_account_bytes_per_token():
    kv = KvCacheAccount.from_config(TINY)
    # one float16 K row plus one V row per layer per token
    assert kv.bytes_per_token == 2 * TINY.n_layers * TINY.d_model * 2
    assert kv.total_bytes == 0


def test_kv_account_grows_linearly_with_zero_intercept():
    kv = KvCacheAccount.from_config(TINY)
    totals = []
    for step in range(1, 5):
        kv.add(1)
        totals.append(kv.total_bytes)
    diffs = np.diff([0] + totals)
    assert set(diffs.tolist()) == {kv.bytes_per_token}
    kv.reset()
    assert kv.total_bytes == 0
    with pytest.raises(DataError):
        kv.add(-1)


def test_build_quantized_model_contents():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=3)
    names = [t.name for t in qm.tensors]
    assert names == [p[0] for p in model_tensor_plan(TINY)]
    assert qm.tensor("blk.1.attention_wv").layer == 1
    with pytest.raises(DataError):
        qm.tensor("blk.9.attention_wq")
    again = build_quantized_model(TINY, Scheme.Q4_0, seed=3)
    for a, b in zip(qm.tensors, again.tensors):
        np.testing.assert_array_equal(a.payload, b.payload)


def test_duplicate_tensor_names_rejected():
    qm = build_quantized_model(TINY, Scheme.Q8_0, seed=0)
    with pytest.raises(DataError):
        QuantizedModel(config=TINY, scheme=Scheme.Q8_0, seed=0,
                       tensors=(qm.tensors[0], qm.tensors[0]))


def test_predicted_payload_matches_built_model_exactly():
    for scheme in (Scheme.FP16, Scheme.Q8_0, Scheme.Q5_K, Scheme.Q2_K):
        qm = build_quantized_model(TINY, scheme, seed=1)
        assert qm.payload_bytes == predicted_payload_bytes(TINY, scheme)


def test_predicted_payload_closed_form():
    # recompute from the plan with independent arithmetic
    expected = 0
    for _, role, shape, layer in model_tensor_plan(TINY):
        layout = layout_for(Scheme.Q2_K, role, layer)
        groups = (shape.size + layout.group - 1) // layout.group
        expected += groups * layout.group_bytes
    assert predicted_payload_bytes(TINY, Scheme.Q2_K) == expected


def test_activation_elements_closed_form():
    d, f, v = TINY.d_model, TINY.d_ffn, TINY.vocab_proxy
    per_layer = 4 * (d + d) + 2 * (f + d) + (d + f)
    assert activation_elements(TINY) == TINY.n_layers * per_layer + (v + d)


def test_flops_scale_exactly_with_tokens():
    f64, _ = prefill_counters(TINY, Scheme.Q4_0, 64)
    f512, _ = prefill_counters(TINY, Scheme.Q4_0, 512)
    assert f64 == 2 * TINY.param_count() * 64
    assert f512 == 8 * f64
    fd, _ = decode_counters(TINY, Scheme.Q4_0, 7)
    assert fd == 2 * TINY.param_count() * 7


def test_counter_closed_forms():
    scheme = Scheme.Q8_0
    payload = predicted_payload_bytes(TINY, scheme)
    acts = activation_elements(TINY)
    kv_bpt = 2 * TINY.n_layers * TINY.d_model * 2
    t = 6
    _, pre_bytes = prefill_counters(TINY, scheme, t)
    assert pre_bytes == payload + 4 * t * acts + 2 * kv_bpt * t
    t0 = 5
    _, dec_bytes = decode_counters(TINY, scheme, t, start_tokens=t0)
    expected = (t * payload + 4 * t * acts + kv_bpt * t
                + kv_bpt * (t * t0 + t * (t + 1) // 2))
    assert dec_bytes == expected


def test_decode_bytes_dominated_by_weight_streaming():
    _, dec_bytes = decode_counters(TINY, Scheme.Q8_0, 1)
    assert dec_bytes >= predicted_payload_bytes(TINY, Scheme.Q8_0)


def test_model_rmse_tracks_scheme_precision():
    r8 = model_rmse(build_quantized_model(TINY, Scheme.Q8_0, seed=2))
    r2 = model_rmse(build_quantized_model(TINY, Scheme.Q2_K, seed=2))
    assert 0.0 < r8 < r2
    rf = model_rmse(build_quantized_model(TINY, Scheme.FP16, seed=2))
    assert 0.0 < rf < 1e-3  # binary16 rounding only


def test_prefill_record_fields():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=0)
    kv = KvCacheAccount.from_config(TINY)
    rec = simulate_prefill(qm, input_len=4, kv=kv, seed=7, trial_index=2)
    assert rec.phase == "prefill"
    assert rec.tokens == 4
    assert rec.trial_index == 2
    assert rec.wall_time > 0.0
    assert rec.cpu_time >= 0.0
    assert rec.workers >= 1
    flops, data = prefill_counters(TINY, Scheme.Q4_0, 4)
    assert (rec.flops, rec.bytes) == (flops, data)
    assert kv.tokens_cached == 4


def test_prefill_requires_empty_kv_cache():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=0)
    kv = KvCacheAccount.from_config(TINY)
    simulate_prefill(qm, input_len=2, kv=kv)
    with pytest.raises(UsageError):
        simulate_prefill(qm, input_len=2, kv=kv)


def test_decode_continues_from_prefilled_cache():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=0)
    kv = KvCacheAccount.from_config(TINY)
    simulate_prefill(qm, input_len=3, kv=kv)
    rec = simulate_decode(qm, output_len=2, kv=kv)
    assert kv.tokens_cached == 5
    _, expected_bytes = decode_counters(TINY, Scheme.Q4_0, 2, start_tokens=3)
    assert rec.bytes == expected_bytes
    fresh = simulate_decode(qm, output_len=2)
    assert rec.bytes > fresh.bytes  # longer prefix means more KV traffic


def test_counter_fields_are_run_invariant():
    qm = build_quantized_model(TINY, Scheme.Q8_0, seed=0)
    a = simulate_decode(qm, output_len=2, seed=5)
    b = simulate_decode(qm, output_len=2, seed=5)
    assert (a.tokens, a.flops, a.bytes, a.workers) == (b.tokens, b.flops, b.bytes, b.workers)
    assert a.wall_time > 0.0 and b.wall_time > 0.0


def test_phase_token_validation():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=0)
    with pytest.raises(UsageError):
        simulate_prefill(qm, input_len=0)
    with pytest.raises(UsageError):
        simulate_decode(qm, output_len=0)


def test_bare_config_needs_scheme():
    with pytest.raises(UsageError):
        simulate_prefill(TINY, input_len=1)
    rec = simulate_prefill(TINY, Scheme.Q4_0, input_len=1)
    assert rec.phase == "prefill"


def test_scheme_mismatch_rejected():
    qm = build_quantized_model(TINY, Scheme.Q4_0, seed=0)
    with pytest.raises(UsageError):
        simulate_decode(qm, Scheme.Q8_0, output_len=1)


def test_modes_produce_identical_counters():
    qm = build_quantized_model(TINY, Scheme.Q5_K, seed=0)
    a = simulate_decode(qm, output_len=2, mode=KernelMode.UNPACK_THEN_COMPUTE)
    b = simulate_decode(qm, output_len=2, mode=KernelMode.FUSED_PER_BLOCK)
    assert (a.flops, a.bytes, a.tokens) == (b.flops, b.bytes, b.tokens)
