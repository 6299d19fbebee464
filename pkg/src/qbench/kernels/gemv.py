"""Quantized matrix-vector and matrix-matrix products.

Two modes produce bitwise-identical results:

  fused_per_block     decode packed group records inline, one 32-weight
                      chunk at a time, straight into the dot product
  unpack_then_compute decode bounded row slabs to float32 (cache
                      resident, reused across calls), then run the
                      dense product kernel on them

Determinism contract (shared by every mode, kernel, and batch column):
with f = r*cols + c the flat padded index, the product for output row r
is accumulated over 32-element chunks [32k, 32k+32) intersecting the
row. Within a chunk, prod[j] = w_hat(f)*x(c) in float32 for in-row
positions and +0.0 otherwise; the chunk reduces through a fixed
in-place halving tree (16, 8, 4, 2, 1 pairwise float32 adds); chunk
partials are added to the row accumulator in ascending k. The tree
keeps the reduction order fixed while leaving instruction-level
parallelism available; group sizes are multiples of 32, so a chunk
never straddles a group record.

Dequantization arithmetic matches the numpy codec decoders operation
for operation (same float32 multiplies and adds, same order), so fused
kernels see exactly the values unpack_then_compute materializes.
"""

from __future__ import annotations

import enum
import os

import numba
import numpy as np
from numba import njit, prange

from ..codecs.schemes import BlockLayout
from ..codecs.tensorops import QuantizedTensor
from ..errors import DataError, UsageError
from .unpack import _f16_at, dec_asym_super, dec_sym32, dec_sym_super

_ROW_SLAB_ELEMENTS = 1 << 17  # 512 KB of float32, sized to stay cache resident

_KIND_IDS = {"fp16": 0, "sym32": 1, "sym_super": 2, "asym_super": 3}

WORKERS_ENV = "QBENCH_WORKERS"


class KernelMode(enum.Enum):
    UNPACK_THEN_COMPUTE = "unpack_then_compute"
    FUSED_PER_BLOCK = "fused_per_block"


def _mode_of(mode) -> KernelMode:
    if isinstance(mode, KernelMode):
        return mode
    try:
        return KernelMode(mode)
    except ValueError:
        raise UsageError(f"unknown kernel mode {mode!r}") from None


def max_workers() -> int:
    return numba.config.NUMBA_NUM_THREADS


def resolve_workers(workers: int | None) -> int:
    """Explicit argument, else QBENCH_WORKERS, else all threads; clamped."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV, "")
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise UsageError(f"{WORKERS_ENV}={env!r} is not an integer") from None
        else:
            workers = max_workers()
    if workers < 1:
        raise UsageError(f"worker count must be >= 1, got {workers}")
    return min(workers, max_workers())


def _set_workers(workers: int | None) -> int:
    eff = resolve_workers(workers)
    numba.set_num_threads(eff)
    return eff


@njit(inline="always")
def _code(payload, bit_base, idx, width):
    """idx-th width-bit unsigned code of an LSB-first region."""
    if width == 8:
        return np.int32(payload[(bit_base >> 3) + idx])
    if width == 4:
        b = payload[(bit_base >> 3) + (idx >> 1)]
        return np.int32((b >> np.uint8((idx & 1) << 2)) & np.uint8(0xF))
    pos = bit_base + idx * width
    byte = pos >> 3
    shift = pos & 7
    v = np.uint32(payload[byte]) >> np.uint32(shift)
    if shift + width > 8:
        v |= np.uint32(payload[byte + 1]) << np.uint32(8 - shift)
    return np.int32(v & np.uint32((1 << width) - 1))


@njit(inline="always")
def _fold32(prod):
    """Fixed halving-tree reduction of 32 float32 products."""
    h = 16
    while h >= 1:
        for i in range(h):
            prod[i] = prod[i] + prod[i + h]
        h >>= 1
    return prod[0]


@njit(inline="always")
def _chunk_vals(payload, kind, group, sub, code_bits, param_bits, group_bytes,
                g, chunk_off, vals):
    """Dequantize one group's 32-element chunk into vals (float32)."""
    base_bit = g * group_bytes * 8
    half = np.int32(1 << (code_bits - 1))
    if kind == 1:
        s = _f16_at(payload, g * group_bytes + 4 * code_bits)
        for j in range(32):
            u = _code(payload, base_bit, j, code_bits)
            vals[j] = np.float32(u - half) * s
    elif kind == 2:
        code_bytes = group * code_bits // 8
        param_bit = base_bit + code_bytes * 8
        n_sub = group // sub
        d = _f16_at(payload, g * group_bytes + code_bytes + n_sub * param_bits // 8)
        for j in range(32):
            e = chunk_off + j
            sc = _code(payload, param_bit, e // sub, param_bits)
            s = np.float32(sc) * d
            u = _code(payload, base_bit, e, code_bits)
            vals[j] = np.float32(u - half) * s
    else:
        code_bytes = group * code_bits // 8
        n_sub = group // sub
        param_bytes = n_sub * param_bits // 8
        sparam_bit = base_bit + code_bytes * 8
        mparam_bit = sparam_bit + param_bytes * 8
        super_at = g * group_bytes + code_bytes + 2 * param_bytes
        d = _f16_at(payload, super_at)
        dm = _f16_at(payload, super_at + 2)
        for j in range(32):
            e = chunk_off + j
            si = e // sub
            s = np.float32(_code(payload, sparam_bit, si, param_bits)) * d
            mm = np.float32(_code(payload, mparam_bit, si, param_bits)) * dm
            u = _code(payload, base_bit, e, code_bits)
            vals[j] = np.float32(u) * s + mm


@njit(parallel=True, cache=True)
def _gemv_fused(payload, rows, cols, kind, group, sub, code_bits, param_bits,
                group_bytes, x, y):
    for r in prange(rows):
        fstart = r * cols
        fend = fstart + cols
        vals = np.empty(32, dtype=np.float32)
        prod = np.empty(32, dtype=np.float32)
        acc = np.float32(0.0)
        for ck in range(fstart // 32, (fend - 1) // 32 + 1):
            base = ck * 32
            if kind == 0:
                for j in range(32):
                    f = base + j
                    if fstart <= f < fend:
                        vals[j] = _f16_at(payload, 2 * f)
            else:
                g = base // group
                _chunk_vals(payload, kind, group, sub, code_bits, param_bits,
                            group_bytes, g, base - g * group, vals)
            for j in range(32):
                f = base + j
                if fstart <= f < fend:
                    prod[j] = vals[j] * x[f - fstart]
                else:
                    prod[j] = np.float32(0.0)
            acc += _fold32(prod)
        y[r] = acc


@njit(parallel=True, cache=True)
def _gemm_fused(payload, rows, cols, kind, group, sub, code_bits, param_bits,
                group_bytes, xt, out):
    batch = xt.shape[0]
    for r in prange(rows):
        fstart = r * cols
        fend = fstart + cols
        vals = np.empty(32, dtype=np.float32)
        prod = np.empty(32, dtype=np.float32)
        acc = np.zeros(batch, dtype=np.float32)
        for ck in range(fstart // 32, (fend - 1) // 32 + 1):
            base = ck * 32
            if kind == 0:
                for j in range(32):
                    f = base + j
                    if fstart <= f < fend:
                        vals[j] = _f16_at(payload, 2 * f)
            else:
                g = base // group
                _chunk_vals(payload, kind, group, sub, code_bits, param_bits,
                            group_bytes, g, base - g * group, vals)
            for b in range(batch):
                for j in range(32):
                    f = base + j
                    if fstart <= f < fend:
                        prod[j] = vals[j] * xt[b, f - fstart]
                    else:
                        prod[j] = np.float32(0.0)
                acc[b] += _fold32(prod)
        for b in range(batch):
            out[r, b] = acc[b]


@njit(parallel=True, cache=True)
def _gemv_dense(w, row0, x, y):
    rows, cols = w.shape
    for r in prange(rows):
        fstart = (row0 + r) * cols
        fend = fstart + cols
        prod = np.empty(32, dtype=np.float32)
        acc = np.float32(0.0)
        for ck in range(fstart // 32, (fend - 1) // 32 + 1):
            base = ck * 32
            for j in range(32):
                f = base + j
                if fstart <= f < fend:
                    prod[j] = w[r, f - fstart] * x[f - fstart]
                else:
                    prod[j] = np.float32(0.0)
            acc += _fold32(prod)
        y[r] = acc


@njit(parallel=True, cache=True)
def _gemm_dense(w, row0, xt, out):
    rows, cols = w.shape
    batch = xt.shape[0]
    for r in prange(rows):
        fstart = (row0 + r) * cols
        fend = fstart + cols
        prod = np.empty(32, dtype=np.float32)
        acc = np.zeros(batch, dtype=np.float32)
        for ck in range(fstart // 32, (fend - 1) // 32 + 1):
            base = ck * 32
            for b in range(batch):
                for j in range(32):
                    f = base + j
                    if fstart <= f < fend:
                        prod[j] = w[r, f - fstart] * xt[b, f - fstart]
                    else:
                        prod[j] = np.float32(0.0)
                acc[b] += _fold32(prod)
        for b in range(batch):
            out[r, b] = acc[b]


def _layout_ints(layout: BlockLayout) -> tuple[int, int, int, int, int, int]:
    return (_KIND_IDS[layout.kind], layout.group, layout.sub,
            layout.code_bits, layout.param_bits, layout.group_bytes)


_slab_buf = np.empty(0, dtype=np.float32)
_scratch_buf = np.empty(0, dtype=np.float32)


def _grown(buf: np.ndarray, n: int) -> np.ndarray:
    return buf if buf.size >= n else np.empty(n, dtype=np.float32)


def _decode_groups(layout: BlockLayout, payload: np.ndarray, g0: int, g1: int,
                   out: np.ndarray) -> None:
    if layout.kind == "sym32":
        dec_sym32(payload, g0, g1, layout.code_bits, out)
    elif layout.kind == "sym_super":
        dec_sym_super(payload, g0, g1, layout.code_bits, layout.param_bits, out)
    else:
        dec_asym_super(payload, g0, g1, layout.code_bits, layout.param_bits,
                       layout.sub, out)


def _dequant_rows(qt: QuantizedTensor, r0: int, r1: int) -> np.ndarray:
    """Decode rows [r0, r1) into the reusable slab, returning a 2D view."""
    global _slab_buf, _scratch_buf
    layout = qt.layout
    cols = qt.cols
    lo, hi = r0 * cols, r1 * cols
    n = hi - lo
    if layout.kind == "fp16":
        _slab_buf = _grown(_slab_buf, n)
        np.copyto(_slab_buf[:n], qt.payload.view("<f2")[lo:hi], casting="same_kind")
        return _slab_buf[:n].reshape(r1 - r0, cols)
    group = layout.group
    g0, g1 = lo // group, -(-hi // group)
    span = (g1 - g0) * group
    if lo % group == 0:
        _slab_buf = _grown(_slab_buf, span)
        _decode_groups(layout, qt.payload, g0, g1, _slab_buf)
        return _slab_buf[:n].reshape(r1 - r0, cols)
    _scratch_buf = _grown(_scratch_buf, span)
    _decode_groups(layout, qt.payload, g0, g1, _scratch_buf)
    _slab_buf = _grown(_slab_buf, n)
    start = lo - g0 * group
    np.copyto(_slab_buf[:n], _scratch_buf[start:start + n])
    return _slab_buf[:n].reshape(r1 - r0, cols)


def _check_vector(qt: QuantizedTensor, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape != (qt.cols,):
        raise DataError(
            f"gemv shape mismatch: tensor is {qt.rows}x{qt.cols}, x has {x.shape}"
        )
    return x


def gemv_quant(qt: QuantizedTensor, x, mode=KernelMode.UNPACK_THEN_COMPUTE,
               workers: int | None = None) -> np.ndarray:
    """y = dequantize(qt) @ x under the fixed summation order."""
    mode = _mode_of(mode)
    x = _check_vector(qt, x)
    _set_workers(workers)
    y = np.empty(qt.rows, dtype=np.float32)
    if mode is KernelMode.FUSED_PER_BLOCK:
        kind, group, sub, cb, pb, gb = _layout_ints(qt.layout)
        _gemv_fused(qt.payload, qt.rows, qt.cols, kind, group, sub, cb, pb, gb,
                    x, y)
        return y
    slab_rows = max(1, _ROW_SLAB_ELEMENTS // qt.cols)
    for r0 in range(0, qt.rows, slab_rows):
        r1 = min(r0 + slab_rows, qt.rows)
        _gemv_dense(_dequant_rows(qt, r0, r1), r0, x, y[r0:r1])
    return y


def gemm_quant(qt: QuantizedTensor, xmat, mode=KernelMode.UNPACK_THEN_COMPUTE,
               workers: int | None = None) -> np.ndarray:
    """Column j of the result equals gemv_quant(qt, X[:, j]) bitwise.

    unpack_then_compute decodes each row slab once and reuses it for
    every batch column.
    """
    mode = _mode_of(mode)
    xmat = np.asarray(xmat, dtype=np.float32)
    if xmat.ndim != 2 or xmat.shape[0] != qt.cols:
        raise DataError(
            f"gemm shape mismatch: tensor is {qt.rows}x{qt.cols}, X has {xmat.shape}"
        )
    batch = xmat.shape[1]
    out = np.empty((qt.rows, batch), dtype=np.float32)
    if batch == 0:
        return out
    xt = np.ascontiguousarray(xmat.T)
    _set_workers(workers)
    if mode is KernelMode.FUSED_PER_BLOCK:
        kind, group, sub, cb, pb, gb = _layout_ints(qt.layout)
        _gemm_fused(qt.payload, qt.rows, qt.cols, kind, group, sub, cb, pb, gb,
                    xt, out)
        return out
    slab_rows = max(1, _ROW_SLAB_ELEMENTS // qt.cols)
    for r0 in range(0, qt.rows, slab_rows):
        r1 = min(r0 + slab_rows, qt.rows)
        _gemm_dense(_dequant_rows(qt, r0, r1), r0, xt, out[r0:r1])
    return out
