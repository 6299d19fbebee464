"""Tensor-level quantization: packed payloads for every scheme.

A tensor is flattened row-major, zero-padded at the tail to a whole
number of groups, and serialized as consecutive group records per the
layouts in schemes.py.  Groups therefore straddle row boundaries; the
decoder zeroes pad positions (asymmetric blocks would otherwise
reconstruct them near the block minimum).

Scale handling mirrors the decoder exactly: raw scales are first taken
through binary16 (saturating at +-65504), sub-block scale/min codes are
requantized against the stored super parameters, and weight codes are
computed against those reconstructed float32 values.  That keeps the
round-trip bound |x - x_hat| <= s/2 tied to the scale a reader actually
sees.

When an importance matrix is supplied, per-block parameters come from
the weighted grid fit in the imatrix module (importance of element i is
a_sq[col(i)] * sqrt(sigma2_block + x_i^2), pads weighted zero); the
fitted real-valued parameters then go through the same binary16 and
sub-code storage path as the unweighted fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CodecError, DataError
from ..numerics import fp16_saturate, round_half_away
from ..tensor import DenseTensor, Role, TensorShape
from .packing import pack_codes, unpack_codes
from .schemes import BlockLayout, Scheme, layout_for

_SLAB_ELEMENTS = 1 << 21  # bound encoder temporaries to a few MB


@dataclass
class QuantizedTensor:
    """Packed block payload plus the metadata needed to read it back."""

    shape: TensorShape
    scheme: Scheme
    role: Role
    payload: np.ndarray
    pad_count: int
    name: str = ""
    layer: int = 0

    def __post_init__(self) -> None:
        self.payload = np.ascontiguousarray(self.payload, dtype=np.uint8).reshape(-1)
        self.validate()

    @property
    def layout(self) -> BlockLayout:
        return layout_for(self.scheme, self.role, self.layer)

    @property
    def padded_elements(self) -> int:
        return self.shape.size + self.pad_count

    @property
    def n_groups(self) -> int:
        return self.padded_elements // self.layout.group

    def validate(self) -> None:
        layout = self.layout
        if not 0 <= self.pad_count < layout.group:
            raise CodecError(
                f"tensor '{self.name}': pad_count {self.pad_count} outside "
                f"[0, {layout.group})"
            )
        if self.padded_elements % layout.group != 0:
            raise CodecError(
                f"tensor '{self.name}': padded size {self.padded_elements} is not "
                f"a multiple of group {layout.group}"
            )
        expected = self.n_groups * layout.group_bytes
        if self.payload.size != expected:
            raise CodecError(
                f"tensor '{self.name}': payload is {self.payload.size} bytes, "
                f"layout requires {expected}"
            )

    @property
    def rows(self) -> int:
        return self.shape.rows

    @property
    def cols(self) -> int:
        return self.shape.cols


def _fp16_store(values: np.ndarray) -> np.ndarray:
    """binary16-saturate, keeping the little-endian half-precision array."""
    return fp16_saturate(values).astype("<f2")


def _fp16_bytes(h: np.ndarray) -> np.ndarray:
    return h.view(np.uint8).reshape(*h.shape, 2)


def _bytes_fp16(b: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(b, dtype=np.uint8).view("<f2")[..., 0]


def _codes_against(values: np.ndarray, scale: np.ndarray, lo: int, hi: int,
                   minimum: np.ndarray | None = None) -> np.ndarray:
    """Clamp-rounded codes against broadcastable reconstructed params."""
    scale = np.asarray(scale, dtype=np.float64)
    shifted = values if minimum is None else values - minimum
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(scale > 0.0, shifted / np.where(scale == 0.0, 1.0, scale), 0.0)
    return np.clip(round_half_away(raw), lo, hi).astype(np.int32)


def _weighted(layout: BlockLayout, values: np.ndarray, weights: np.ndarray | None):
    """Split (n_groups, group) values into fit units with importance weights."""
    n_sub = layout.n_sub
    v = values.reshape(-1, layout.sub)
    if weights is None:
        return v, None, n_sub
    w = weights.reshape(-1, layout.sub)
    sigma2 = np.mean(v * v, axis=1, keepdims=True)
    return v, w * np.sqrt(sigma2 + v * v), n_sub


def _fit_sub_params(layout: BlockLayout, values: np.ndarray,
                    weights: np.ndarray | None, symmetric: bool):
    """Per-sub-block raw (scale[, min]) from plain or weighted fits."""
    half = 1 << (layout.code_bits - 1)
    levels = (1 << layout.code_bits) - 1
    v, w, _ = _weighted(layout, values, weights)
    if w is None:
        if symmetric:
            return np.max(np.abs(v), axis=1) / half, None
        mn = np.min(v, axis=1)
        return (np.max(v, axis=1) - mn) / levels, mn
    from ..imatrix import weighted_fit_batch

    s, m, _q, _obj = weighted_fit_batch(v, w, layout.code_bits, asymmetric=not symmetric)
    return s, (None if symmetric else m)


def _encode_fp16(flat: np.ndarray) -> np.ndarray:
    return _fp16_bytes(_fp16_store(flat)).reshape(-1)


def _encode_sym32(groups: np.ndarray, layout: BlockLayout,
                  weights: np.ndarray | None) -> np.ndarray:
    n = layout.code_bits
    half = 1 << (n - 1)
    s_raw, _ = _fit_sub_params(layout, groups, weights, symmetric=True)
    h = _fp16_store(s_raw)
    s32 = h.astype(np.float32).astype(np.float64)
    q = _codes_against(groups, s32[:, None], -half, half - 1)
    out = np.empty((groups.shape[0], layout.group_bytes), dtype=np.uint8)
    out[:, : 4 * n] = pack_codes((q + half).astype(np.uint8), n)
    out[:, 4 * n:] = _fp16_bytes(h)
    return out.reshape(-1)


def _quantize_params(raw: np.ndarray, param_bits: int, signed_extreme: bool):
    """Quantize per-sub params against a shared binary16 super param.

    Returns (codes, stored fp16, reconstructed float32).  The super param
    is extreme/levels: the max for scales (non-negative), the signed
    largest-magnitude entry for minimums.
    """
    levels = (1 << param_bits) - 1
    if signed_extreme:
        idx = np.argmax(np.abs(raw), axis=1)
        extreme = raw[np.arange(raw.shape[0]), idx]
    else:
        extreme = np.max(raw, axis=1)
    h = _fp16_store(extreme / levels)
    d32 = h.astype(np.float32)
    d64 = d32.astype(np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d64 != 0.0, raw / np.where(d64 == 0.0, 1.0, d64), 0.0)
    codes = np.clip(round_half_away(ratio), 0, levels).astype(np.uint8)
    recon = codes.astype(np.float32) * d32[:, None]
    return codes, h, recon


def _encode_sym_super(groups: np.ndarray, layout: BlockLayout,
                      weights: np.ndarray | None) -> np.ndarray:
    n = layout.code_bits
    half = 1 << (n - 1)
    g = groups.shape[0]
    s_raw, _ = _fit_sub_params(layout, groups, weights, symmetric=True)
    sc, h, s_rec = _quantize_params(s_raw.reshape(g, layout.n_sub), layout.param_bits,
                                    signed_extreme=False)
    subs = groups.reshape(g, layout.n_sub, layout.sub)
    q = _codes_against(subs, s_rec.astype(np.float64)[:, :, None], -half, half - 1)
    code_bytes = layout.group * n // 8
    param_bytes = layout.n_sub * layout.param_bits // 8
    out = np.empty((g, layout.group_bytes), dtype=np.uint8)
    out[:, :code_bytes] = pack_codes((q + half).astype(np.uint8).reshape(g, -1), n)
    out[:, code_bytes:code_bytes + param_bytes] = pack_codes(sc, layout.param_bits)
    out[:, code_bytes + param_bytes:] = _fp16_bytes(h)
    return out.reshape(-1)


def _encode_asym_super(groups: np.ndarray, layout: BlockLayout,
                       weights: np.ndarray | None) -> np.ndarray:
    n = layout.code_bits
    levels = (1 << n) - 1
    g = groups.shape[0]
    s_raw, m_raw = _fit_sub_params(layout, groups, weights, symmetric=False)
    sc, hs, s_rec = _quantize_params(s_raw.reshape(g, layout.n_sub), layout.param_bits,
                                     signed_extreme=False)
    mc, hm, m_rec = _quantize_params(m_raw.reshape(g, layout.n_sub), layout.param_bits,
                                     signed_extreme=True)
    subs = groups.reshape(g, layout.n_sub, layout.sub)
    q = _codes_against(subs, s_rec.astype(np.float64)[:, :, None], 0, levels,
                       minimum=m_rec.astype(np.float64)[:, :, None])
    code_bytes = layout.group * n // 8
    param_bytes = layout.n_sub * layout.param_bits // 8
    out = np.empty((g, layout.group_bytes), dtype=np.uint8)
    out[:, :code_bytes] = pack_codes(q.astype(np.uint8).reshape(g, -1), n)
    p0 = code_bytes
    out[:, p0:p0 + param_bytes] = pack_codes(sc, layout.param_bits)
    out[:, p0 + param_bytes:p0 + 2 * param_bytes] = pack_codes(mc, layout.param_bits)
    out[:, p0 + 2 * param_bytes:p0 + 2 * param_bytes + 2] = _fp16_bytes(hs)
    out[:, p0 + 2 * param_bytes + 2:] = _fp16_bytes(hm)
    return out.reshape(-1)


def _importance_flat(t: DenseTensor, weights) -> np.ndarray | None:
    """Per-element a_sq over the flattened tensor, zero at pads."""
    if weights is None:
        return None
    a_sq = weights.a_sq_mean()
    if a_sq.shape[0] != t.shape.cols:
        raise CodecError(
            f"tensor '{t.name}': importance matrix has {a_sq.shape[0]} columns, "
            f"tensor has {t.shape.cols}"
        )
    return np.tile(a_sq, t.shape.rows)


def quantize_tensor(t: DenseTensor, scheme: Scheme, weights=None) -> QuantizedTensor:
    """Encode a dense tensor under a scheme, optionally importance-weighted."""
    t.require_finite()
    layout = layout_for(scheme, t.role, t.layer)
    n = t.shape.size
    group = layout.group
    padded = -(-n // group) * group
    pad_count = padded - n
    flat = t.values.reshape(-1)

    if layout.kind == "fp16":
        payload = _encode_fp16(flat)
        return QuantizedTensor(t.shape, scheme, t.role, payload, pad_count,
                               name=t.name, layer=t.layer)

    a_flat = _importance_flat(t, weights)
    encoder = {
        "sym32": _encode_sym32,
        "sym_super": _encode_sym_super,
        "asym_super": _encode_asym_super,
    }[layout.kind]

    slab_groups = max(1, _SLAB_ELEMENTS // group)
    n_groups = padded // group
    chunks = []
    for g0 in range(0, n_groups, slab_groups):
        g1 = min(g0 + slab_groups, n_groups)
        lo, hi = g0 * group, g1 * group
        vals = np.zeros((g1 - g0) * group, dtype=np.float64)
        take = min(hi, n) - lo
        if take > 0:
            vals[:take] = flat[lo:lo + take]
        w = None
        if a_flat is not None:
            w = np.zeros((g1 - g0) * group, dtype=np.float64)
            if take > 0:
                w[:take] = a_flat[lo:lo + take]
        chunks.append(encoder(vals.reshape(-1, group), layout, w))
    payload = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.uint8)
    return QuantizedTensor(t.shape, scheme, t.role, payload, pad_count,
                           name=t.name, layer=t.layer)


def _decode_sym32(records: np.ndarray, layout: BlockLayout) -> np.ndarray:
    n = layout.code_bits
    half = 1 << (n - 1)
    u = unpack_codes(records[:, : 4 * n], n, 32)
    s = _bytes_fp16(records[:, 4 * n:]).astype(np.float32)
    q = u.astype(np.int32) - half
    return q.astype(np.float32) * s[:, None]


def _decode_sym_super(records: np.ndarray, layout: BlockLayout) -> np.ndarray:
    n = layout.code_bits
    half = 1 << (n - 1)
    g = records.shape[0]
    code_bytes = layout.group * n // 8
    param_bytes = layout.n_sub * layout.param_bits // 8
    u = unpack_codes(records[:, :code_bytes], n, layout.group)
    sc = unpack_codes(records[:, code_bytes:code_bytes + param_bytes],
                      layout.param_bits, layout.n_sub)
    d = _bytes_fp16(records[:, code_bytes + param_bytes:]).astype(np.float32)
    s_rec = sc.astype(np.float32) * d[:, None]
    q = (u.astype(np.int32) - half).astype(np.float32).reshape(g, layout.n_sub, layout.sub)
    return (q * s_rec[:, :, None]).reshape(g, layout.group)


def _decode_asym_super(records: np.ndarray, layout: BlockLayout) -> np.ndarray:
    n = layout.code_bits
    g = records.shape[0]
    code_bytes = layout.group * n // 8
    param_bytes = layout.n_sub * layout.param_bits // 8
    u = unpack_codes(records[:, :code_bytes], n, layout.group)
    p0 = code_bytes
    sc = unpack_codes(records[:, p0:p0 + param_bytes], layout.param_bits, layout.n_sub)
    mc = unpack_codes(records[:, p0 + param_bytes:p0 + 2 * param_bytes],
                      layout.param_bits, layout.n_sub)
    ds = _bytes_fp16(records[:, p0 + 2 * param_bytes:p0 + 2 * param_bytes + 2])
    dm = _bytes_fp16(records[:, p0 + 2 * param_bytes + 2:])
    s_rec = sc.astype(np.float32) * ds.astype(np.float32)[:, None]
    m_rec = mc.astype(np.float32) * dm.astype(np.float32)[:, None]
    q = u.astype(np.float32).reshape(g, layout.n_sub, layout.sub)
    return (q * s_rec[:, :, None] + m_rec[:, :, None]).reshape(g, layout.group)


def dequantize_padded(qt: QuantizedTensor) -> np.ndarray:
    """Flat float32 reconstruction over the padded length, pads zeroed.

    Asymmetric blocks reconstruct their pad codes near the block minimum;
    the contract is that pads decode to exact zeros, so they are forced
    here rather than left to the block arithmetic.
    """
    qt.validate()
    layout = qt.layout
    if layout.kind == "fp16":
        flat = np.ascontiguousarray(qt.payload).view("<f2").astype(np.float32)
    else:
        records = qt.payload.reshape(qt.n_groups, layout.group_bytes)
        decoder = {
            "sym32": _decode_sym32,
            "sym_super": _decode_sym_super,
            "asym_super": _decode_asym_super,
        }[layout.kind]
        slab_groups = max(1, _SLAB_ELEMENTS // layout.group)
        parts = [
            decoder(records[g0:g0 + slab_groups], layout).reshape(-1)
            for g0 in range(0, qt.n_groups, slab_groups)
        ]
        flat = np.concatenate(parts) if parts else np.empty(0, dtype=np.float32)
    if qt.pad_count:
        flat[qt.shape.size:] = 0.0
    return flat


def dequantize_tensor(qt: QuantizedTensor) -> DenseTensor:
    """Reconstruct the dense tensor (padding stripped)."""
    flat = dequantize_padded(qt)[: qt.shape.size]
    values = flat.reshape(qt.shape.rows, qt.shape.cols)
    return DenseTensor(shape=qt.shape, values=values, role=qt.role,
                       name=qt.name, layer=qt.layer)


def round_trip_rmse(t: DenseTensor, scheme: Scheme, weights=None) -> float:
    """RMSE between a tensor and its quantize/dequantize round trip."""
    back = dequantize_tensor(quantize_tensor(t, scheme, weights))
    diff = back.values.astype(np.float64) - t.values.astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def quantize_model(tensors: list[DenseTensor], scheme: Scheme,
                   weights_by_name: dict | None = None) -> list[QuantizedTensor]:
    """Quantize every tensor of a model under one scheme."""
    out = []
    for t in tensors:
        w = weights_by_name.get(t.name) if weights_by_name else None
        out.append(quantize_tensor(t, scheme, w))
    return out
