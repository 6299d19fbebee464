"""Quantization schemes and their serialized block layouts.

Eight schemes are supported.  FP16 stores raw binary16 values.  Q8_0,
Q5_0, and Q4_0 use single-layer symmetric blocks of 32 weights with one
binary16 scale (BPW n + 16/32).  The K schemes use 256-weight super
blocks whose sub-block parameters are themselves quantized against
shared binary16 super parameters, with precision routed per tensor role:

  Q5_K  attention_wv / feed_forward_w2 on even layers: symmetric 16x16,
        6-bit codes, 8-bit sub scales            -> 6.5625 BPW
        everything else: asymmetric 32x8, 5-bit codes, 6-bit sub params
                                                 -> 5.5 BPW
  Q4_K  all roles: asymmetric 32x8, 4-bit codes, 6-bit sub params
                                                 -> 4.5 BPW
  Q3_K  attention_wv / attention_wo / feed_forward_w2: the Q4_K layout
                                                 -> 4.5 BPW
        everything else: symmetric 16x16, 3-bit codes, 6-bit sub scales
                                                 -> 3.4375 BPW
  Q2_K  attention_wv / feed_forward_w2 on even layers: the Q4_K layout
                                                 -> 4.5 BPW
        everything else: asymmetric 16x16, 2-bit codes, 4-bit sub
        scale and min codes                      -> 2.625 BPW

"Even layers" realizes the split formats' half-of-the-role precision
bump with a deterministic tie-break on the tensor's layer index.

Serialized group record layouts (all little-endian, codes packed
LSB-first per packing.py):

  fp16        [value f16]                                   2 B
  sym32(n)    [32 codes, n bit each][scale f16]             4n + 2 B
  sym_super   [256 codes][16 scale codes][super scale f16]
  asym_super  [256 codes][scale codes][min codes]
              [super scale f16][super min f16]

Symmetric codes are signed and stored offset by 2^(n-1); asymmetric
codes are unsigned as-is.  Sub-block parameters dequantize as
s_j = float32(scale_code_j) * super_scale (and m_j likewise against
super_min), and weights as code * s_j (+ m_j).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from ..errors import UsageError
from ..tensor import Role


class Scheme(enum.IntEnum):
    """Supported schemes; values double as the container's scheme byte."""

    FP16 = 0
    Q8_0 = 1
    Q5_0 = 2
    Q4_0 = 3
    Q5_K = 4
    Q4_K = 5
    Q3_K = 6
    Q2_K = 7


def parse_scheme(name: str) -> Scheme:
    try:
        return Scheme[name.strip().upper()]
    except KeyError:
        known = ", ".join(s.name for s in Scheme)
        raise UsageError(f"unknown scheme '{name}' (known: {known})") from None


@dataclass(frozen=True)
class BlockLayout:
    """Geometry and bit widths of one serialized group record."""

    kind: str        # "fp16" | "sym32" | "sym_super" | "asym_super"
    group: int       # weights per serialized group
    sub: int         # weights per sub-block (== group when single-layer)
    code_bits: int   # bits per weight code
    param_bits: int  # bits per sub-block scale/min code (0 when unused)

    @property
    def n_sub(self) -> int:
        return self.group // self.sub

    @property
    def symmetric(self) -> bool:
        return self.kind in ("sym32", "sym_super")

    @property
    def group_bytes(self) -> int:
        if self.kind == "fp16":
            return 2
        bits = self.group * self.code_bits
        if self.kind == "sym32":
            bits += 16
        elif self.kind == "sym_super":
            bits += self.n_sub * self.param_bits + 16
        else:  # asym_super
            bits += 2 * self.n_sub * self.param_bits + 32
        assert bits % 8 == 0
        return bits // 8

    @property
    def bpw(self) -> Fraction:
        return Fraction(self.group_bytes * 8, self.group)


FP16_LAYOUT = BlockLayout("fp16", 1, 1, 16, 0)
SYM32_8 = BlockLayout("sym32", 32, 32, 8, 0)
SYM32_5 = BlockLayout("sym32", 32, 32, 5, 0)
SYM32_4 = BlockLayout("sym32", 32, 32, 4, 0)
SYM16X16_6_8 = BlockLayout("sym_super", 256, 16, 6, 8)
SYM16X16_3_6 = BlockLayout("sym_super", 256, 16, 3, 6)
ASYM32X8_5_6 = BlockLayout("asym_super", 256, 32, 5, 6)
ASYM32X8_4_6 = BlockLayout("asym_super", 256, 32, 4, 6)
ASYM16X16_2_4 = BlockLayout("asym_super", 256, 16, 2, 4)

_SPLIT_ROLES = (Role.ATTENTION_WV, Role.FEED_FORWARD_W2)
_Q3K_HIGH_ROLES = (Role.ATTENTION_WV, Role.ATTENTION_WO, Role.FEED_FORWARD_W2)


def layout_for(scheme: Scheme, role: Role = Role.OTHER, layer: int = 0) -> BlockLayout:
    """Resolve the block layout a scheme uses for one tensor."""
    if scheme == Scheme.FP16:
        return FP16_LAYOUT
    if scheme == Scheme.Q8_0:
        return SYM32_8
    if scheme == Scheme.Q5_0:
        return SYM32_5
    if scheme == Scheme.Q4_0:
        return SYM32_4
    if scheme == Scheme.Q5_K:
        if role in _SPLIT_ROLES and layer % 2 == 0:
            return SYM16X16_6_8
        return ASYM32X8_5_6
    if scheme == Scheme.Q4_K:
        return ASYM32X8_4_6
    if scheme == Scheme.Q3_K:
        if role in _Q3K_HIGH_ROLES:
            return ASYM32X8_4_6
        return SYM16X16_3_6
    if scheme == Scheme.Q2_K:
        if role in _SPLIT_ROLES and layer % 2 == 0:
            return ASYM32X8_4_6
        return ASYM16X16_2_4
    raise UsageError(f"unknown scheme {scheme!r}")


def bpw(scheme: Scheme, role: Role = Role.OTHER, layer: int = 0) -> Fraction:
    """Exact serialized bits per weight, metadata included."""
    return layout_for(scheme, role, layer).bpw


def role_table(scheme: Scheme, layer: int = 0) -> dict[Role, BlockLayout]:
    """Role -> layout map for one scheme at one layer parity."""
    return {role: layout_for(scheme, role, layer) for role in Role}
