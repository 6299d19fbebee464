"""Shared test oracles that read packed payloads independently of the codecs.

The helpers here re-derive per-element stored parameters straight from the
serialized group records using only the documented layout geometry, so
round-trip bounds are checked against what a reader actually reconstructs,
not against the encoder's internal state.
"""

from __future__ import annotations

import numpy as np

from qbench.codecs.packing import unpack_codes
from qbench.codecs.tensorops import QuantizedTensor
from qbench.numerics import round_half_away


def _f16_column(records: np.ndarray, start: int) -> np.ndarray:
    """Little-endian binary16 at byte offset ``start`` of every record."""
    return records[:, start:start + 2].copy().view("<f2")[:, 0].astype(np.float32)


def stored_params(qt: QuantizedTensor) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-element (scale, minimum) a reader reconstructs, over padded length.

    Returns float32 arrays; minimum is None for symmetric layouts.
    """
    layout = qt.layout
    records = qt.payload.reshape(qt.n_groups, layout.group_bytes)
    if layout.kind == "sym32":
        s = _f16_column(records, 4 * layout.code_bits)
        return np.repeat(s, layout.group), None
    code_bytes = layout.group * layout.code_bits // 8
    param_bytes = layout.n_sub * layout.param_bits // 8
    sc = unpack_codes(records[:, code_bytes:code_bytes + param_bytes],
                      layout.param_bits, layout.n_sub)
    if layout.kind == "sym_super":
        d = _f16_column(records, code_bytes + param_bytes)
        s = sc.astype(np.float32) * d[:, None]
        return np.repeat(s.reshape(-1), layout.sub), None
    mc = unpack_codes(records[:, code_bytes + param_bytes:code_bytes + 2 * param_bytes],
                      layout.param_bits, layout.n_sub)
    ds = _f16_column(records, code_bytes + 2 * param_bytes)
    dm = _f16_column(records, code_bytes + 2 * param_bytes + 2)
    s = sc.astype(np.float32) * ds[:, None]
    m = mc.astype(np.float32) * dm[:, None]
    return np.repeat(s.reshape(-1), layout.sub), np.repeat(m.reshape(-1), layout.sub)


def in_range_violations(x_padded: np.ndarray, x_hat: np.ndarray,
                        qt: QuantizedTensor) -> tuple[int, int]:
    """Count elements violating |x - x_hat| <= s/2 among in-range inputs.

    An input is in range when its nearest code against the stored block
    parameters lies inside the representable code interval; values past
    the clamp boundary (the positive extreme of a symmetric block) fall
    outside the quantizer's domain and are excluded.  Returns
    (violations, checked).
    """
    layout = qt.layout
    half = 1 << (layout.code_bits - 1)
    lo, hi = (-half, half - 1) if layout.symmetric else (0, 2 * half - 1)
    s, m = stored_params(qt)
    x = np.asarray(x_padded, dtype=np.float64)
    s64 = s.astype(np.float64)
    shifted = x if m is None else x - m.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = round_half_away(np.where(s64 > 0.0, shifted / np.where(s64 == 0.0, 1.0, s64), 0.0))
    in_range = (s64 > 0.0) & (q >= lo) & (q <= hi)
    err = np.abs(np.asarray(x_hat, dtype=np.float64) - x)
    violations = int(np.count_nonzero(in_range & (err > s64 / 2)))
    return violations, int(np.count_nonzero(in_range))
