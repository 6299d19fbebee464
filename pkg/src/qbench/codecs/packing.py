"""Bit-level packing of unsigned integer code vectors.

Codes are packed LSB-first: code i of width w occupies region bits
[i*w, (i+1)*w), where region bit b lives in byte b >> 3 at in-byte
position b & 7.  A region of k codes therefore serializes to exactly
k*w/8 bytes; every layout in this package keeps k*w a multiple of 8.

Widths 8, 4, and 2 divide a byte evenly and get direct array paths; the
remaining widths go through an explicit bit matrix.  Both directions are
pure numpy and operate on the last axis, so a (n_blocks, k) code matrix
packs to (n_blocks, k*w/8) in one call.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError


def _check(width: int, count: int) -> None:
    if not 1 <= width <= 8:
        raise DataError(f"code width {width} outside [1, 8]")
    if count * width % 8 != 0:
        raise DataError(f"{count} codes of width {width} do not fill whole bytes")


def pack_codes(codes: np.ndarray, width: int) -> np.ndarray:
    """Pack unsigned codes (last axis) into bytes, LSB-first."""
    codes = np.asarray(codes)
    count = codes.shape[-1]
    _check(width, count)
    if np.any((codes < 0) | (codes >> width != 0)):
        raise DataError(f"code out of range for width {width}")
    codes = codes.astype(np.uint8)
    if width == 8:
        return codes.copy()
    if width == 4:
        return (codes[..., 0::2] | (codes[..., 1::2] << 4)).astype(np.uint8)
    if width == 2:
        return (
            codes[..., 0::4]
            | (codes[..., 1::4] << 2)
            | (codes[..., 2::4] << 4)
            | (codes[..., 3::4] << 6)
        ).astype(np.uint8)
    shifts = np.arange(width, dtype=np.uint8)
    bits = (codes[..., :, None] >> shifts) & 1
    bits = bits.reshape(*codes.shape[:-1], count * width)
    return np.packbits(bits, axis=-1, bitorder="little")


def unpack_codes(data: np.ndarray, width: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; returns uint8 codes on the last axis."""
    data = np.asarray(data, dtype=np.uint8)
    _check(width, count)
    nbytes = count * width // 8
    if data.shape[-1] != nbytes:
        raise DataError(f"expected {nbytes} packed bytes, got {data.shape[-1]}")
    if width == 8:
        return data.copy()
    if width == 4:
        out = np.empty(data.shape[:-1] + (count,), dtype=np.uint8)
        out[..., 0::2] = data & 0x0F
        out[..., 1::2] = data >> 4
        return out
    if width == 2:
        out = np.empty(data.shape[:-1] + (count,), dtype=np.uint8)
        out[..., 0::4] = data & 0x03
        out[..., 1::4] = (data >> 2) & 0x03
        out[..., 2::4] = (data >> 4) & 0x03
        out[..., 3::4] = (data >> 6) & 0x03
        return out
    bits = np.unpackbits(data, axis=-1, bitorder="little")
    bits = bits.reshape(*data.shape[:-1], count, width)
    weights = (1 << np.arange(width)).astype(np.uint8)
    return (bits * weights).sum(axis=-1).astype(np.uint8)
