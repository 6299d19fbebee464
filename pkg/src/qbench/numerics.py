"""Shared numeric primitives: rounding and binary16 handling.

Every quantizer in the package rounds half away from zero (2.5 -> 3,
-2.5 -> -3).  numpy's ``round`` rounds half to even, so a floor-based
form is used instead.  Block scales are stored as binary16; values whose
magnitude exceeds the largest finite binary16 saturate to +-65504 rather
than overflowing to infinity, so a decoder never sees a non-finite scale.
"""

from __future__ import annotations

import numpy as np

FP16_MAX = 65504.0


def round_half_away(x: np.ndarray | float) -> np.ndarray | float:
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.floor(np.abs(x) + 0.5) * np.sign(x)


def fp16_saturate(x: np.ndarray | float) -> np.ndarray:
    """Convert to binary16, clamping overflow to the finite extremes.

    Round-to-nearest-even cast first, then any resulting infinity is
    pulled back to +-65504.  Input is expected to be finite.
    """
    with np.errstate(over="ignore"):
        h = np.asarray(x, dtype=np.float64).astype(np.float16)
    bad = np.isinf(h)
    if np.any(bad):
        h = np.where(bad, np.sign(h) * np.float16(FP16_MAX), h)
    return h


def fp16_bits(h: np.ndarray) -> np.ndarray:
    """Raw little-endian uint16 payload of a binary16 array."""
    return np.ascontiguousarray(h, dtype="<f2").view(np.uint16)


def bits_fp16(u: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fp16_bits`."""
    return np.ascontiguousarray(u, dtype="<u2").view(np.float16)
