"""Slab dequantization kernels for the unpack stage of quantized products.

Compiled twins of the numpy block decoders in codecs.tensorops: bitwise
identical output, restructured so the conversion pipeline vectorizes.
Each kernel splits a group's codes into a function-local float buffer
with fixed-trip loops (widths 8, 4, and 2 get byte-exact extraction;
other widths go through a branchless two-byte window on the LSB-first
bitstream), then applies the per-sub-block affine transform in a second
fixed-trip pass straight into the output. Constant trip counts and
alias-free local buffers are what let the optimizer keep both passes in
SIMD registers; data-dependent branches in the extraction path cost
more than the loads they save.

binary16 fields are converted through an exact power-of-two table:
value = mantissa * 2^(exponent-25) computed in float64 (11 mantissa
bits times a power of two is exact, and so is the final float32
rounding), matching numpy's half-to-float conversion bit for bit on
every non-NaN pattern. NaN payload bits collapse to the canonical
quiet NaN with the sign kept; the block encoders never emit one.

SLP vectorization is enabled process-wide here. It only packs the same
scalar float32 operations into SIMD lanes and never reassociates them,
so kernel results are unchanged; the fixed summation order of the
product kernels stays bitwise reproducible.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit

numba.config.SLP_VECTORIZE = 1

# 2^(e-25) for binary16 exponent fields e = 0..31, with the sign bit
# folded in as entries 32..63; e = 0 rescales to the subnormal step
# 2^-24 (mantissa used without the implicit 1024).
_F16_POW = np.array(
    [math.ldexp(1.0, max(e & 31, 1) - 25) * (-1.0 if e >> 5 else 1.0)
     for e in range(64)], dtype=np.float64
)


@njit(inline="always")
def _f16_at(payload, byte_idx):
    """binary16 at a byte offset -> float32, matching numpy's astype.

    Folding the sign into the power table keeps the common path free of
    a data-dependent branch; negation commutes with both the exact
    float64 product and the float32 rounding, so results are unchanged.
    """
    bits = np.uint32(payload[byte_idx]) | (np.uint32(payload[byte_idx + 1]) << 8)
    e = (bits >> 10) & np.uint32(0x1F)
    m = np.float64(bits & np.uint32(0x3FF)) + 1024.0 * np.float64(e != 0)
    if e == 31:
        val = math.inf if m == 1024.0 else math.nan
        if bits >> 15:
            val = -val
        return np.float32(val)
    return np.float32(m * _F16_POW[bits >> np.uint32(10)])


@njit(inline="always")
def _bits_at(raw, pos, width):
    """width-bit unsigned code at bit position pos of an LSB-first stream.

    Reads a two-byte window unconditionally, so the byte at pos >> 3 must
    not be the last byte of raw. Every group record ends with parameter
    and binary16 fields after its code region, which keeps all windows in
    bounds; the unconditional read avoids a data-dependent branch that
    mispredicts on most code widths.
    """
    byte = pos >> 3
    shift = pos & 7
    v = np.uint32(raw[byte]) | (np.uint32(raw[byte + 1]) << np.uint32(8))
    return np.int32((v >> np.uint32(shift)) & np.uint32((1 << width) - 1))


@njit(cache=True)
def dec_sym32(payload, g0, g1, code_bits, out):
    """Decode 32-element symmetric groups [g0, g1) into out."""
    gb = 4 * code_bits + 2
    half = np.int32(1 << (code_bits - 1))
    if code_bits == 4:
        # scales first, then one splitting pass per group; keeping the
        # scalar binary16 work out of the nibble loop is what lets the
        # latter stay packed
        n = g1 - g0
        sv = np.empty(n, dtype=np.float32)
        for i in range(n):
            sv[i] = _f16_at(payload, (g0 + i) * gb + 16)
        for i in range(n):
            b = (g0 + i) * gb
            o = i * 32
            s = sv[i]
            for j in range(16):
                v = payload[b + j]
                out[o + 2 * j] = np.float32(np.int32(v & np.uint8(0xF)) - half) * s
                out[o + 2 * j + 1] = np.float32(np.int32(v >> 4) - half) * s
        return
    cv = np.empty(32, dtype=np.float32)
    for g in range(g0, g1):
        b = g * gb
        s = _f16_at(payload, b + 4 * code_bits)
        if code_bits == 8:
            for j in range(32):
                cv[j] = np.float32(np.int32(payload[b + j]) - half)
        else:
            for j in range(32):
                cv[j] = np.float32(
                    _bits_at(payload, b * 8 + j * code_bits, code_bits) - half)
        o = (g - g0) * 32
        for j in range(32):
            out[o + j] = cv[j] * s


@njit(cache=True)
def dec_sym_super(payload, g0, g1, code_bits, param_bits, out):
    """Decode 256-element symmetric super-groups with 16 sub-scales."""
    code_bytes = 32 * code_bits
    param_bytes = 2 * param_bits
    gb = code_bytes + param_bytes + 2
    half = np.int32(1 << (code_bits - 1))
    cv = np.empty(256, dtype=np.float32)
    scale = np.empty(16, dtype=np.float32)
    for g in range(g0, g1):
        b = g * gb
        d = _f16_at(payload, b + code_bytes + param_bytes)
        for sub in range(16):
            if param_bits == 8:
                sc = np.int32(payload[b + code_bytes + sub])
            else:
                sc = _bits_at(payload, (b + code_bytes) * 8 + sub * param_bits,
                              param_bits)
            scale[sub] = np.float32(sc) * d
        for j in range(256):
            cv[j] = np.float32(
                _bits_at(payload, b * 8 + j * code_bits, code_bits) - half)
        base = (g - g0) * 256
        for sub in range(16):
            s = scale[sub]
            o = sub << 4
            for jj in range(16):
                out[base + o + jj] = cv[o + jj] * s


@njit(cache=True)
def dec_asym_super(payload, g0, g1, code_bits, param_bits, sub_size, out):
    """Decode 256-element asymmetric super-groups (scale and min codes)."""
    code_bytes = 32 * code_bits
    n_sub = 256 // sub_size
    param_bytes = n_sub * param_bits // 8
    gb = code_bytes + 2 * param_bytes + 4
    cv = np.empty(256, dtype=np.float32)
    scale = np.empty(16, dtype=np.float32)
    mins = np.empty(16, dtype=np.float32)
    for g in range(g0, g1):
        b = g * gb
        pb = b + code_bytes
        ds = _f16_at(payload, pb + 2 * param_bytes)
        dm = _f16_at(payload, pb + 2 * param_bytes + 2)
        for sub in range(n_sub):
            sc = _bits_at(payload, pb * 8 + sub * param_bits, param_bits)
            mc = _bits_at(payload, (pb + param_bytes) * 8 + sub * param_bits,
                          param_bits)
            scale[sub] = np.float32(sc) * ds
            mins[sub] = np.float32(mc) * dm
        if code_bits == 4:
            for j in range(128):
                v = payload[b + j]
                cv[2 * j] = np.float32(np.int32(v & np.uint8(0xF)))
                cv[2 * j + 1] = np.float32(np.int32(v >> 4))
        elif code_bits == 2:
            for j in range(64):
                v = payload[b + j]
                cv[4 * j] = np.float32(np.int32(v & np.uint8(3)))
                cv[4 * j + 1] = np.float32(np.int32((v >> 2) & np.uint8(3)))
                cv[4 * j + 2] = np.float32(np.int32((v >> 4) & np.uint8(3)))
                cv[4 * j + 3] = np.float32(np.int32(v >> 6))
        else:
            for j in range(256):
                cv[j] = np.float32(
                    _bits_at(payload, b * 8 + j * code_bits, code_bits))
        base = (g - g0) * 256
        # every asymmetric layout uses sub_size 32 or 16
        if sub_size == 32:
            for sub in range(8):
                s = scale[sub]
                m = mins[sub]
                o = sub * 32
                for jj in range(32):
                    out[base + o + jj] = cv[o + jj] * s + m
        else:
            for sub in range(16):
                s = scale[sub]
                m = mins[sub]
                o = sub * 16
                for jj in range(16):
                    out[base + o + jj] = cv[o + jj] * s + m
