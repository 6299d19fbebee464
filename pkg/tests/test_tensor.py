"""Synthetic tensors and models: determinism, shapes, and validation."""

import numpy as np
import pytest

from qbench.errors import DataError, UsageError
from qbench.tensor import (
    ROLE_NAMES,
    DenseTensor,
    ModelConfig,
    Role,
    TensorShape,
    Workload,
    iter_model,
    make_model,
    make_random_tensor,
    model_tensor_plan,
)

TINY = ModelConfig(n_layers=2, d_model=8, d_ffn=16, n_heads=2, vocab_proxy=4, label="tiny")


def test_role_ids_are_stable():
    # serialized containers store these as single bytes
    assert int(Role.OTHER) == 0
    assert int(Role.ATTENTION_WV) == 1
    assert int(Role.ATTENTION_WO) == 2
    assert int(Role.FEED_FORWARD_W2) == 3
    assert ROLE_NAMES["attention_wv"] is Role.ATTENTION_WV


def test_tensor_shape_size_and_validation():
    assert TensorShape(3, 5).size == 15
    with pytest.raises(DataError):
        TensorShape(0, 5)
    with pytest.raises(DataError):
        TensorShape(3, -1)


def test_dense_tensor_casts_to_contiguous_float32():
    values = np.arange(6, dtype=np.float64).reshape(2, 3)[:, ::-1]
    t = DenseTensor(shape=TensorShape(2, 3), values=values, name="t")
    assert t.values.dtype == np.float32
    assert t.values.flags["C_CONTIGUOUS"]
    np.testing.assert_array_equal(t.values, values.astype(np.float32))


def test_dense_tensor_shape_mismatch_names_tensor():
    with pytest.raises(DataError) as err:
        DenseTensor(shape=TensorShape(2, 3), values=np.zeros((3, 2)), name="blk.0.w")
    assert "blk.0.w" in str(err.value)


def test_require_finite_rejects_nan():
    t = DenseTensor(shape=TensorShape(1, 2), values=np.array([[1.0, np.nan]]), name="bad")
    with pytest.raises(DataError) as err:
        t.require_finite()
    assert "bad" in str(err.value)


def test_model_config_param_count_closed_form():
    # per layer: 4 attention d^2 plus 3 feed-forward d*ffn, plus the output head
    expected = 2 * (4 * 8 * 8 + 3 * 8 * 16) + 4 * 8
    assert TINY.param_count() == expected
    assert TINY.head_dim == 4


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_layers=0, d_model=8, d_ffn=16, n_heads=2),
        dict(n_layers=1, d_model=8, d_ffn=0, n_heads=2),
        dict(n_layers=1, d_model=9, d_ffn=16, n_heads=2),  # heads do not divide d_model
        dict(n_layers=1, d_model=8.0, d_ffn=16, n_heads=2),  # non-integer
    ],
)
def test_model_config_validation(kwargs):
    with pytest.raises(UsageError):
        ModelConfig(**kwargs)


def test_workload_defaults_and_validation():
    assert Workload.DEFAULT_INPUT_LENS == (64, 128, 256, 512)
    assert Workload.DEFAULT_OUTPUT_LEN == 1024
    with pytest.raises(UsageError):
        Workload(input_len=0, output_len=1, seed=0)
    with pytest.raises(UsageError):
        Workload(input_len=1, output_len=0, seed=0)


def test_make_random_tensor_is_deterministic():
    a = make_random_tensor(TensorShape(16, 16), Role.OTHER, seed=42)
    b = make_random_tensor(TensorShape(16, 16), Role.OTHER, seed=42)
    c = make_random_tensor(TensorShape(16, 16), Role.OTHER, seed=43)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_make_random_tensor_moments():
    t = make_random_tensor(TensorShape(256, 512), Role.OTHER, seed=1)
    n = t.shape.size
    assert np.all(np.isfinite(t.values))
    assert abs(float(t.values.mean())) < 4.0 / np.sqrt(n)
    assert abs(float(t.values.var()) - 1.0) < 6.0 / np.sqrt(n)


def test_model_tensor_plan_layout():
    plan = model_tensor_plan(TINY)
    assert len(plan) == 7 * TINY.n_layers + 1
    names = [p[0] for p in plan]
    assert names[0] == "blk.0.attention_wq"
    assert names[7] == "blk.1.attention_wq"
    assert names[-1] == "output"
    by_name = {name: (role, shape, layer) for name, role, shape, layer in plan}
    assert by_name["blk.0.attention_wv"] == (Role.ATTENTION_WV, TensorShape(8, 8), 0)
    assert by_name["blk.1.attention_wo"] == (Role.ATTENTION_WO, TensorShape(8, 8), 1)
    assert by_name["blk.0.feed_forward_w1"] == (Role.OTHER, TensorShape(16, 8), 0)
    assert by_name["blk.1.feed_forward_w2"] == (Role.FEED_FORWARD_W2, TensorShape(8, 16), 1)
    assert by_name["output"] == (Role.OTHER, TensorShape(4, 8), 0)
    total = sum(shape.size for _, _, shape, _ in plan)
    assert total == TINY.param_count()


def test_iter_model_matches_make_model():
    streamed = list(iter_model(TINY, seed=5))
    materialized = make_model(TINY, seed=5)
    assert [t.name for t in streamed] == [t.name for t in materialized]
    for a, b in zip(streamed, materialized):
        np.testing.assert_array_equal(a.values, b.values)


def test_model_tensors_do_not_depend_on_other_shapes():
    # same position and shape, different d_ffn: attention weights identical
    wide = ModelConfig(n_layers=1, d_model=8, d_ffn=32, n_heads=2, vocab_proxy=4)
    a = make_model(TINY, seed=9)
    b = make_model(wide, seed=9)
    np.testing.assert_array_equal(a[0].values, b[0].values)  # blk.0.attention_wq
    np.testing.assert_array_equal(a[3].values, b[3].values)  # blk.0.attention_wo


def test_model_generation_is_seed_sensitive():
    a = make_model(TINY, seed=1)
    b = make_model(TINY, seed=2)
    assert not np.array_equal(a[0].values, b[0].values)
