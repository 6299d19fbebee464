"""Bit packing: LSB-first layout, exact inverses, and input validation."""

import numpy as np
import pytest

from qbench.codecs.packing import pack_codes, unpack_codes
from qbench.errors import DataError


@pytest.mark.parametrize("width", range(1, 9))
def test_pack_unpack_round_trip(width):
    rng = np.random.default_rng(width)
    count = 8 * 16  # multiple of 8 keeps every width byte-aligned
    codes = rng.integers(0, 1 << width, size=count, dtype=np.int64)
    packed = pack_codes(codes, width)
    assert packed.dtype == np.uint8
    assert packed.size == count * width // 8
    np.testing.assert_array_equal(unpack_codes(packed, width, count), codes)


@pytest.mark.parametrize("width", range(1, 9))
def test_pack_unpack_round_trip_batched(width):
    rng = np.random.default_rng(100 + width)
    codes = rng.integers(0, 1 << width, size=(5, 24), dtype=np.int64)
    packed = pack_codes(codes, width)
    assert packed.shape == (5, 24 * width // 8)
    np.testing.assert_array_equal(unpack_codes(packed, width, 24), codes)


def test_lsb_first_nibbles():
    packed = pack_codes(np.array([1, 2]), 4)
    np.testing.assert_array_equal(packed, [0x21])


def test_lsb_first_two_bit_codes():
    packed = pack_codes(np.array([0, 1, 2, 3]), 2)
    np.testing.assert_array_equal(packed, [0b11100100])


def test_lsb_first_single_bits():
    packed = pack_codes(np.array([1, 0, 0, 0, 0, 0, 0, 1]), 1)
    np.testing.assert_array_equal(packed, [0x81])


def test_lsb_first_five_bit_crosses_byte_boundary():
    codes = np.zeros(8, dtype=np.int64)
    codes[1] = 31  # bits 5..9: three high bits of byte 0, two low bits of byte 1
    packed = pack_codes(codes, 5)
    np.testing.assert_array_equal(packed, [0xE0, 0x03, 0x00, 0x00, 0x00])


def test_eight_bit_is_identity_bytes():
    codes = np.array([0, 1, 127, 255])
    packed = pack_codes(codes, 8)
    np.testing.assert_array_equal(packed, codes.astype(np.uint8))


@pytest.mark.parametrize("width", [0, 9, -1])
def test_unsupported_width_rejected(width):
    with pytest.raises(DataError):
        pack_codes(np.array([0, 0, 0, 0, 0, 0, 0, 0]), width)


def test_non_byte_aligned_count_rejected():
    with pytest.raises(DataError):
        pack_codes(np.array([1, 2]), 5)  # 10 bits


def test_out_of_range_codes_rejected():
    with pytest.raises(DataError):
        pack_codes(np.array([16, 0]), 4)
    with pytest.raises(DataError):
        pack_codes(np.array([-1, 0]), 4)


def test_unpack_wrong_byte_count_rejected():
    packed = pack_codes(np.array([1, 2]), 4)
    with pytest.raises(DataError):
        unpack_codes(packed, 4, 4)
