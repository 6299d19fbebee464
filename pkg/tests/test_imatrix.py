"""Importance accumulation, weighted fits, refinement, and QIM1 serialization."""

import numpy as np
import pytest

from qbench.errors import CodecError, DataError, IoError
from qbench.imatrix import (
    ImportanceMatrix,
    accumulate,
    accumulate_batch,
    block_weights,
    check_sum_squared_approx,
    exhaustive_fit_oracle,
    perturbative_refine,
    read_imatrix,
    synth_imatrix,
    weighted_affine_fit,
    weighted_fit_batch,
    write_imatrix,
)
from qbench.tensor import Role, TensorShape, make_random_tensor


def _instance(seed, size=4):
    """One random (values, importance) fit problem."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=size)
    a_sq = rng.uniform(0.5, 2.0, size=size)
    return v, block_weights(v, a_sq).a_tilde_sq


def test_accumulate_running_sums():
    m = ImportanceMatrix(2)
    accumulate(m, [1.0, 2.0])
    accumulate(m, [1.0, 2.0])
    np.testing.assert_array_equal(m.sum_sq, [2.0, 8.0])
    assert m.sample_count == 2
    np.testing.assert_array_equal(m.a_sq_mean(), [1.0, 4.0])


def test_accumulate_batch_matches_row_loop():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(7, 5))
    a = ImportanceMatrix(5)
    accumulate_batch(a, rows)
    b = ImportanceMatrix(5)
    for row in rows:
        accumulate(b, row)
    np.testing.assert_allclose(a.sum_sq, b.sum_sq, rtol=1e-12)
    assert a.sample_count == b.sample_count == 7


def test_accumulate_is_order_invariant():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(6, 3))
    a = ImportanceMatrix(3)
    b = ImportanceMatrix(3)
    for row in rows:
        accumulate(a, row)
    for row in rows[::-1]:
        accumulate(b, row)
    np.testing.assert_allclose(a.sum_sq, b.sum_sq, rtol=1e-12)


def test_empty_matrix_falls_back_to_uniform_importance():
    m = ImportanceMatrix(4)
    np.testing.assert_array_equal(m.a_sq_mean(), np.ones(4))


def test_accumulate_validation():
    m = ImportanceMatrix(3)
    with pytest.raises(DataError):
        accumulate(m, [1.0, 2.0])
    with pytest.raises(DataError):
        accumulate(m, [1.0, np.nan, 2.0])
    with pytest.raises(DataError):
        accumulate_batch(m, np.ones((2, 4)))
    with pytest.raises(DataError):
        ImportanceMatrix(0)
    with pytest.raises(DataError):
        ImportanceMatrix(2, np.array([-1.0, 0.0]))


def test_block_weights_hand_values():
    bw = block_weights([3.0, 4.0], [1.0, 1.0])
    assert bw.sigma2 == 12.5
    np.testing.assert_allclose(bw.a_tilde_sq,
                               [np.sqrt(12.5 + 9.0), np.sqrt(12.5 + 16.0)])


def test_block_weights_zero_block_gives_zero_importance():
    bw = block_weights([0.0], [4.0])
    assert bw.sigma2 == 0.0
    np.testing.assert_array_equal(bw.a_tilde_sq, [0.0])


def test_block_weights_mixed_block():
    bw = block_weights([0.0, np.sqrt(8.0)], [4.0, 4.0])
    assert bw.sigma2 == pytest.approx(4.0)
    assert bw.a_tilde_sq[0] == pytest.approx(8.0)  # 4 * sqrt(4 + 0)


def test_block_weights_validation():
    with pytest.raises(DataError):
        block_weights([1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        block_weights([np.inf], [1.0])


def test_fit_integer_lattice_is_exact():
    v = np.array([0.0, 1.0, 2.0, 3.0])
    s, m, codes, obj = weighted_affine_fit(v, np.ones(4), 2, asymmetric=True)
    assert obj == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(codes * s + m, v, atol=1e-12)


def test_fit_concentrated_importance_zeroes_its_error():
    # only position 0 matters; the fit can hit it exactly
    v = np.array([0.37, -1.2, 0.8, 2.4])
    w = np.array([1.0, 0.0, 0.0, 0.0])
    s, m, codes, obj = weighted_affine_fit(v, w, 2, asymmetric=True)
    assert obj == pytest.approx(0.0, abs=1e-18)
    assert codes[0] * s + m == pytest.approx(0.37, abs=1e-12)


@pytest.mark.parametrize("seed", [11, 23])
def test_fit_matches_exhaustive_oracle(seed):
    v, w = _instance(seed)
    s, m, codes, obj = weighted_affine_fit(v, w, 2, asymmetric=True)
    _q, s2, m2, obj2 = perturbative_refine(codes, v, w, s, m, 8, 2, asymmetric=True)
    _oq, _os, _om, oracle_obj = exhaustive_fit_oracle(v, w, 2, asymmetric=True)
    assert obj2 <= obj
    assert abs(obj2 - oracle_obj) <= 1e-6


@pytest.mark.parametrize("n_bits,asymmetric", [(2, True), (3, True), (2, False), (4, False)])
def test_fit_never_worse_than_min_max_baseline(n_bits, asymmetric):
    from qbench.numerics import round_half_away

    rng = np.random.default_rng(77)
    half = 1 << (n_bits - 1)
    for _ in range(30):
        v = rng.normal(size=8)
        a_sq = rng.uniform(0.1, 3.0, size=8)
        w = block_weights(v, a_sq).a_tilde_sq
        s, m, codes, obj = weighted_affine_fit(v, w, n_bits, asymmetric=asymmetric)
        if asymmetric:
            s_mm = (v.max() - v.min()) / (2 * half - 1)
            m_mm = v.min()
            lo, hi = 0, 2 * half - 1
        else:
            s_mm = np.abs(v).max() / half
            m_mm = 0.0
            lo, hi = -half, half - 1
        q_mm = np.clip(round_half_away((v - m_mm) / s_mm), lo, hi)
        baseline = float(np.sum(w * (q_mm * s_mm + m_mm - v) ** 2))
        assert obj <= baseline + 1e-12


def test_fit_batch_rows_are_independent():
    v, w = _instance(31, size=8)
    v2, w2 = _instance(32, size=8)
    s, m, q, obj = weighted_fit_batch(np.stack([v, v2]), np.stack([w, w2]), 3)
    s_a, m_a, q_a, obj_a = weighted_affine_fit(v, w, 3)
    s_b, m_b, q_b, obj_b = weighted_affine_fit(v2, w2, 3)
    np.testing.assert_array_equal(q[0], q_a)
    np.testing.assert_array_equal(q[1], q_b)
    assert s[0] == s_a and s[1] == s_b
    assert obj[0] == obj_a and obj[1] == obj_b


def test_fit_importance_scale_invariance():
    # doubling activations quadruples importance: same codes, 4x objective
    v, w = _instance(41, size=8)
    s1, m1, q1, obj1 = weighted_affine_fit(v, w, 3, asymmetric=True)
    s4, m4, q4, obj4 = weighted_affine_fit(v, 4.0 * w, 3, asymmetric=True)
    np.testing.assert_array_equal(q1, q4)
    assert s1 == s4 and m1 == m4
    assert obj4 == 4.0 * obj1


def test_all_zero_importance_falls_back_to_uniform():
    v = np.array([0.0, 1.0, 2.0, 3.0])
    s, m, codes, obj = weighted_affine_fit(v, np.zeros(4), 2, asymmetric=True)
    assert obj == pytest.approx(0.0, abs=1e-20)


def test_fit_validation():
    with pytest.raises(DataError):
        weighted_affine_fit(np.array([]), np.array([]), 4)
    with pytest.raises(DataError):
        weighted_affine_fit(np.ones(4), np.ones(3), 4)
    with pytest.raises(DataError):
        weighted_affine_fit(np.ones(4), -np.ones(4), 4)
    with pytest.raises(DataError):
        weighted_affine_fit(np.ones(4), np.ones(4), 9)
    with pytest.raises(DataError):
        weighted_affine_fit(np.array([1.0, np.nan]), np.ones(2), 4)


def test_refine_keeps_an_exactly_optimal_assignment():
    # zero objective admits no strictly improving move: codes must not change
    v = np.array([0.0, 1.0, 2.0, 3.0])
    s, m, codes, obj = weighted_affine_fit(v, np.ones(4), 2, asymmetric=True)
    q2, _s2, _m2, obj2 = perturbative_refine(codes, v, np.ones(4), s, m, 8, 2,
                                             asymmetric=True)
    np.testing.assert_array_equal(q2, codes)
    assert obj2 == obj


def test_refine_never_leaves_the_oracle_level():
    # near-optimal starts may hop between float-degenerate co-optima but
    # the objective never rises above where it began
    v, w = _instance(23)
    s, m, codes, obj = weighted_affine_fit(v, w, 2, asymmetric=True)
    _q2, _s2, _m2, obj2 = perturbative_refine(codes, v, w, s, m, 8, 2, asymmetric=True)
    _oq, _os, _om, oracle_obj = exhaustive_fit_oracle(v, w, 2, asymmetric=True)
    assert obj2 <= obj
    assert abs(obj2 - oracle_obj) <= 1e-9


def test_refine_zero_rounds_is_identity():
    v, w = _instance(11)
    start = np.array([0, 1, 2, 3], dtype=np.int32)
    q, s, m, obj = perturbative_refine(start, v, w, 1.0, 0.0, 0, 2, asymmetric=True)
    np.testing.assert_array_equal(q, start)
    assert s == 1.0 and m == 0.0


def test_refine_descends_monotonically_from_a_crude_start():
    v, w = _instance(11)
    start = np.zeros(4, dtype=np.int32)
    start_obj = float(np.sum(w * (0.0 - v) ** 2))
    prev = start_obj
    for rounds in range(1, 6):
        _q, _s, _m, obj = perturbative_refine(start, v, w, 1.0, 0.0, rounds, 2,
                                              asymmetric=True)
        assert obj <= prev + 1e-15
        prev = obj
    # best-improvement single-code moves may stall above the global optimum
    _oq, _os, _om, oracle_obj = exhaustive_fit_oracle(v, w, 2, asymmetric=True)
    assert prev < start_obj
    assert prev >= oracle_obj - 1e-12


def test_refine_rejects_out_of_range_start():
    v, w = _instance(11)
    with pytest.raises(DataError):
        perturbative_refine(np.array([0, 1, 2, 4]), v, w, 1.0, 0.0, 1, 2, asymmetric=True)


def test_oracle_guard_against_explosion():
    with pytest.raises(DataError):
        exhaustive_fit_oracle(np.ones(5), np.ones(5), 4)


def test_sum_squared_identity_in_one_dimension():
    lhs, rhs, rel_gap = check_sum_squared_approx(1, 5000, seed=3)
    assert rel_gap < 1e-12
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_sum_squared_approx_holds_for_independent_activations():
    _lhs, _rhs, rel_gap = check_sum_squared_approx(8, 20000, seed=5)
    assert rel_gap < 0.1


def test_sum_squared_approx_fails_for_correlated_activations():
    # all-equal activations keep the cross terms; the diagonal rule breaks
    _lhs, _rhs, rel_gap = check_sum_squared_approx(8, 20000, seed=1, correlated=True)
    assert rel_gap > 0.05


def test_sum_squared_validation():
    with pytest.raises(DataError):
        check_sum_squared_approx(0, 100, seed=0)
    with pytest.raises(DataError):
        check_sum_squared_approx(4, 0, seed=0)


def test_synth_imatrix_shapes_and_determinism():
    tensors = [
        make_random_tensor(TensorShape(4, 16), Role.OTHER, 1, name="a"),
        make_random_tensor(TensorShape(4, 8), Role.ATTENTION_WV, 2, name="b"),
    ]
    ms = synth_imatrix(tensors, samples=10, seed=9)
    assert set(ms) == {"a", "b"}
    assert ms["a"].columns == 16
    assert ms["b"].columns == 8
    assert ms["a"].sample_count == 10
    again = synth_imatrix(tensors, samples=10, seed=9)
    np.testing.assert_array_equal(ms["a"].sum_sq, again["a"].sum_sq)
    with pytest.raises(DataError):
        synth_imatrix(tensors, samples=0, seed=9)


def test_imatrix_file_round_trip(tmp_path):
    tensors = [make_random_tensor(TensorShape(2, 12), Role.OTHER, 3, name="blk.0.w")]
    ms = synth_imatrix(tensors, samples=5, seed=4)
    path = tmp_path / "m.qim"
    write_imatrix(ms, path)
    back = read_imatrix(path)
    assert set(back) == set(ms)
    for name in ms:
        assert back[name].columns == ms[name].columns
        assert back[name].sample_count == ms[name].sample_count
        np.testing.assert_array_equal(back[name].sum_sq, ms[name].sum_sq)


def test_imatrix_file_error_taxonomy(tmp_path):
    tensors = [make_random_tensor(TensorShape(2, 4), Role.OTHER, 3, name="w")]
    path = tmp_path / "m.qim"
    write_imatrix(synth_imatrix(tensors, samples=2, seed=0), path)
    blob = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.qim"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CodecError):
        read_imatrix(bad_magic)

    bad_version = tmp_path / "bad_version.qim"
    bad_version.write_bytes(blob[:4] + b"\x09\x00\x00\x00" + blob[8:])
    with pytest.raises(CodecError):
        read_imatrix(bad_version)

    truncated = tmp_path / "truncated.qim"
    truncated.write_bytes(blob[:-3])
    with pytest.raises(CodecError):
        read_imatrix(truncated)

    trailing = tmp_path / "trailing.qim"
    trailing.write_bytes(blob + b"\x00")
    with pytest.raises(CodecError):
        read_imatrix(trailing)

    with pytest.raises(IoError):
        read_imatrix(tmp_path / "missing.qim")
