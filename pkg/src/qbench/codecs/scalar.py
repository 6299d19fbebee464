"""Scalar reference quantizers.

These are the textbook forms the packed block formats build on:

  symmetric   s = max|x| / 2^(n-1),  q = clamp(round(x/s), -2^(n-1), 2^(n-1)-1)
  asymmetric  m = min(x), s = (max(x) - m) / (2^n - 1),
              q = clamp(round((x-m)/s), 0, 2^n - 1)

Rounding is half-away-from-zero.  All-constant input degenerates to
scale 0 with all-zero codes; dequantization then reconstructs the
constant (via the offset) or zero (symmetric).  Arithmetic is float64;
the block codecs apply the same formulas with binary16-stored scales.
"""

from __future__ import annotations

import numpy as np

from ..errors import CodecError, DataError
from ..numerics import round_half_away


def _check_values(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot quantize an empty value list")
    if not np.all(np.isfinite(values)):
        raise DataError("values contain NaN or Inf")
    return values


def _check_bits(n_bits: int) -> None:
    if not 2 <= n_bits <= 8:
        raise DataError(f"n_bits must be in [2, 8], got {n_bits}")


def quantize_symmetric(values, n_bits: int) -> tuple[np.ndarray, float]:
    """Signed n-bit codes and non-negative scale for one block."""
    values = _check_values(values)
    _check_bits(n_bits)
    half = 1 << (n_bits - 1)
    scale = float(np.max(np.abs(values))) / half
    if scale == 0.0:
        return np.zeros(values.shape, dtype=np.int32), 0.0
    codes = round_half_away(values / scale)
    codes = np.clip(codes, -half, half - 1).astype(np.int32)
    return codes, scale


def quantize_asymmetric(values, n_bits: int) -> tuple[np.ndarray, float, float]:
    """Unsigned n-bit codes, scale, and minimum offset for one block."""
    values = _check_values(values)
    _check_bits(n_bits)
    levels = (1 << n_bits) - 1
    minimum = float(np.min(values))
    scale = (float(np.max(values)) - minimum) / levels
    if scale == 0.0:
        return np.zeros(values.shape, dtype=np.int32), 0.0, minimum
    codes = round_half_away((values - minimum) / scale)
    codes = np.clip(codes, 0, levels).astype(np.int32)
    return codes, scale, minimum


def dequantize(codes, scale: float, minimum: float | None = None,
               n_bits: int = 8) -> np.ndarray:
    """Reconstruct values: q*s (symmetric) or q*s + m (asymmetric)."""
    codes = np.asarray(codes)
    _check_bits(n_bits)
    half = 1 << (n_bits - 1)
    if minimum is None:
        lo, hi = -half, half - 1
    else:
        lo, hi = 0, 2 * half - 1
    if np.any((codes < lo) | (codes > hi)):
        raise CodecError(f"code outside [{lo}, {hi}] for {n_bits}-bit dequantization")
    out = codes.astype(np.float64) * scale
    if minimum is not None:
        out = out + minimum
    return out
