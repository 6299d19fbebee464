"""Container format: byte-stable round trips and corruption handling."""

import struct

import numpy as np
import pytest

from qbench.codecs.container import MAGIC, read_container, write_container
from qbench.codecs.schemes import Scheme
from qbench.codecs.tensorops import dequantize_tensor, quantize_tensor
from qbench.errors import CodecError, IoError
from qbench.tensor import Role, TensorShape, make_random_tensor


def _quantized_set(seed=0):
    specs = [
        ("blk.0.attention_wq", Role.OTHER, (8, 32), Scheme.Q8_0, 0),
        ("blk.0.attention_wv", Role.ATTENTION_WV, (4, 256), Scheme.Q5_K, 0),
        ("blk.1.feed_forward_w2", Role.FEED_FORWARD_W2, (2, 300), Scheme.Q2_K, 1),
        ("output", Role.OTHER, (5, 17), Scheme.FP16, 0),
    ]
    out = []
    for i, (name, role, shape, scheme, layer) in enumerate(specs):
        t = make_random_tensor(TensorShape(*shape), role, seed + i, name=name, layer=layer)
        out.append(quantize_tensor(t, scheme))
    return out


def test_round_trip_preserves_every_field(tmp_path):
    tensors = _quantized_set()
    path = tmp_path / "m.qbf"
    write_container(tensors, path)
    back = read_container(path)
    assert len(back) == len(tensors)
    for a, b in zip(tensors, back):
        assert b.name == a.name
        assert b.scheme == a.scheme
        assert b.role == a.role
        assert b.layer == a.layer
        assert (b.shape.rows, b.shape.cols) == (a.shape.rows, a.shape.cols)
        assert b.pad_count == a.pad_count
        np.testing.assert_array_equal(b.payload, a.payload)


def test_rewrite_is_byte_identical(tmp_path):
    tensors = _quantized_set()
    first = tmp_path / "a.qbf"
    second = tmp_path / "b.qbf"
    write_container(tensors, first)
    write_container(read_container(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_empty_container(tmp_path):
    path = tmp_path / "empty.qbf"
    write_container([], path)
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert len(blob) == 12  # magic + version + tensor count
    assert read_container(path) == []


def test_layer_is_rederived_from_name(tmp_path):
    t = make_random_tensor(TensorShape(2, 256), Role.ATTENTION_WV, 1,
                           name="blk.3.attention_wv", layer=3)
    qt = quantize_tensor(t, Scheme.Q2_K)
    path = tmp_path / "m.qbf"
    write_container([qt], path)
    back = read_container(path)[0]
    assert back.layer == 3
    # layer parity picks the layout, so decoding must agree with the source
    np.testing.assert_array_equal(dequantize_tensor(back).values,
                                  dequantize_tensor(qt).values)


def test_free_tensor_names_map_to_layer_zero(tmp_path):
    t = make_random_tensor(TensorShape(2, 32), Role.OTHER, 1, name="output")
    path = tmp_path / "m.qbf"
    write_container([quantize_tensor(t, Scheme.Q4_0)], path)
    assert read_container(path)[0].layer == 0


def test_flipped_magic_rejected_without_partial_result(tmp_path):
    path = tmp_path / "m.qbf"
    write_container(_quantized_set(), path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    bad = tmp_path / "bad.qbf"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CodecError) as err:
        read_container(bad)
    assert "magic" in str(err.value).lower()


def test_version_mismatch_rejected(tmp_path):
    path = tmp_path / "m.qbf"
    write_container([], path)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 4, 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CodecError):
        read_container(path)


@pytest.mark.parametrize("cut", [3, 11, 13, 40, -1])
def test_truncation_rejected_at_any_boundary(tmp_path, cut):
    path = tmp_path / "m.qbf"
    write_container(_quantized_set(), path)
    blob = path.read_bytes()
    short = tmp_path / "short.qbf"
    short.write_bytes(blob[:cut] if cut > 0 else blob[:len(blob) + cut])
    with pytest.raises(CodecError) as err:
        read_container(short)
    assert "truncated" in str(err.value) or "magic" in str(err.value).lower()


def test_payload_corruption_fails_crc(tmp_path):
    path = tmp_path / "m.qbf"
    write_container(_quantized_set(), path)
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0x01  # inside the last tensor's payload
    bad = tmp_path / "bad.qbf"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CodecError) as err:
        read_container(bad)
    assert "checksum" in str(err.value).lower() or "crc" in str(err.value).lower()


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.qbf"
    write_container(_quantized_set(), path)
    bad = tmp_path / "bad.qbf"
    bad.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(CodecError):
        read_container(bad)


def test_unknown_role_and_scheme_ids_rejected(tmp_path):
    t = make_random_tensor(TensorShape(2, 32), Role.OTHER, 1, name="w")
    qt = quantize_tensor(t, Scheme.Q8_0)
    path = tmp_path / "m.qbf"
    write_container([qt], path)
    blob = path.read_bytes()
    # entry header follows magic+version+count and the 4-byte name length + name
    entry = 12 + 4 + len(b"w")
    for offset, label in ((entry, "role"), (entry + 1, "scheme")):
        mutated = bytearray(blob)
        mutated[offset] = 0xEE
        bad = tmp_path / f"bad_{label}.qbf"
        bad.write_bytes(bytes(mutated))
        with pytest.raises(CodecError):
            read_container(bad)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_container(tmp_path / "nope.qbf")


def test_mutation_fuzz_never_crashes(tmp_path):
    path = tmp_path / "m.qbf"
    write_container(_quantized_set(), path)
    blob = path.read_bytes()
    rng = np.random.default_rng(0)
    for k in range(200):
        mutated = bytearray(blob)
        pos = int(rng.integers(0, len(blob)))
        mutated[pos] ^= int(rng.integers(1, 256))
        target = tmp_path / "fuzz.qbf"
        target.write_bytes(bytes(mutated))
        # single-byte flips must either fail with a typed error or, when the
        # flip lands in a name byte and stays valid UTF-8, parse cleanly
        try:
            read_container(target)
        except CodecError:
            pass
