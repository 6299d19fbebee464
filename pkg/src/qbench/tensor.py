"""Dense matrices, synthetic model generation, and workload descriptions.

Weights are drawn from a standard normal distribution through a Philox
counter-based generator plus an inverse-CDF transform, so a (config, seed)
pair reproduces the same bytes on any platform and numpy version.  Tensors
carry one of four roles; the quantization schemes that allocate precision
per component key off the role (and, for the split formats, the layer
parity).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DataError, UsageError

_U53 = 1 << 53


class Role(enum.IntEnum):
    """Model component classes that quantization schemes distinguish."""

    OTHER = 0
    ATTENTION_WV = 1
    ATTENTION_WO = 2
    FEED_FORWARD_W2 = 3


ROLE_NAMES = {r.name.lower(): r for r in Role}


@dataclass(frozen=True)
class TensorShape:
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise DataError(f"invalid shape {self.rows}x{self.cols}: dims must be >= 1")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass
class DenseTensor:
    """Row-major float32 matrix tagged with a role.

    ``layer`` records which transformer block the tensor belongs to; the
    split schemes route even layers to their high-precision path.  Free
    tensors default to layer 0.
    """

    shape: TensorShape
    values: np.ndarray
    role: Role = Role.OTHER
    name: str = ""
    layer: int = 0

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (self.shape.rows, self.shape.cols):
            raise DataError(
                f"tensor '{self.name}': values shape {self.values.shape} "
                f"!= declared {self.shape.rows}x{self.shape.cols}"
            )

    def require_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"tensor '{self.name}' contains NaN or Inf values")


@dataclass(frozen=True)
class ModelConfig:
    """Synthetic transformer shape description."""

    n_layers: int
    d_model: int
    d_ffn: int
    n_heads: int
    vocab_proxy: int = 1024
    label: str = "model"

    def __post_init__(self) -> None:
        for fname in ("n_layers", "d_model", "d_ffn", "n_heads", "vocab_proxy"):
            v = getattr(self, fname)
            if not isinstance(v, int) or v < 1:
                raise UsageError(f"model config: {fname} must be an integer >= 1, got {v!r}")
        if self.d_model % self.n_heads != 0:
            raise UsageError(
                f"model config: d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def param_count(self) -> int:
        per_layer = 4 * self.d_model * self.d_model + 3 * self.d_model * self.d_ffn
        return self.n_layers * per_layer + self.vocab_proxy * self.d_model


@dataclass(frozen=True)
class Workload:
    """Token counts and seed for one benchmark run."""

    input_len: int
    output_len: int
    seed: int

    DEFAULT_INPUT_LENS = (64, 128, 256, 512)
    DEFAULT_OUTPUT_LEN = 1024

    def __post_init__(self) -> None:
        if self.input_len < 1:
            raise UsageError(f"workload: input_len must be >= 1, got {self.input_len}")
        if self.output_len < 1:
            raise UsageError(f"workload: output_len must be >= 1, got {self.output_len}")


def _standard_normal(seed_seq: np.random.SeedSequence, n: int) -> np.ndarray:
    """Deterministic N(0,1) draws: Philox counters -> uniforms -> inverse CDF.

    Uniforms are (k + 0.5) / 2^53 over k in [0, 2^53), keeping ndtri away
    from both endpoints, so every draw is finite.
    """
    gen = np.random.Generator(np.random.Philox(seed_seq))
    u = (gen.integers(0, _U53, size=n, dtype=np.uint64) + 0.5) / _U53
    return ndtri(u)


def make_random_tensor(shape: TensorShape, role: Role, seed: int,
                       name: str = "", layer: int = 0) -> DenseTensor:
    """Draw a zero-mean unit-variance tensor, reproducible from the seed."""
    vals = _standard_normal(np.random.SeedSequence(seed), shape.size)
    vals = vals.astype(np.float32).reshape(shape.rows, shape.cols)
    return DenseTensor(shape=shape, values=vals, role=role, name=name, layer=layer)


# (name suffix, role, shape builder) for one transformer layer
_LAYER_PLAN = (
    ("attention_wq", Role.OTHER, lambda c: (c.d_model, c.d_model)),
    ("attention_wk", Role.OTHER, lambda c: (c.d_model, c.d_model)),
    ("attention_wv", Role.ATTENTION_WV, lambda c: (c.d_model, c.d_model)),
    ("attention_wo", Role.ATTENTION_WO, lambda c: (c.d_model, c.d_model)),
    ("feed_forward_w1", Role.OTHER, lambda c: (c.d_ffn, c.d_model)),
    ("feed_forward_w3", Role.OTHER, lambda c: (c.d_ffn, c.d_model)),
    ("feed_forward_w2", Role.FEED_FORWARD_W2, lambda c: (c.d_model, c.d_ffn)),
)


def model_tensor_plan(config: ModelConfig) -> list[tuple[str, Role, TensorShape, int]]:
    """Deterministic (name, role, shape, layer) listing for a config."""
    plan = []
    for layer in range(config.n_layers):
        for suffix, role, shape_of in _LAYER_PLAN:
            rows, cols = shape_of(config)
            plan.append((f"blk.{layer}.{suffix}", role, TensorShape(rows, cols), layer))
    plan.append(("output", Role.OTHER, TensorShape(config.vocab_proxy, config.d_model), 0))
    return plan


def iter_model(config: ModelConfig, seed: int):
    """Yield the weight tensors of a synthetic model one at a time.

    Each tensor gets its own Philox stream keyed by (seed, position), so
    the bytes of one tensor do not depend on the shapes of the others,
    and consumers that discard tensors as they go never hold the whole
    model dense.
    """
    for idx, (name, role, shape, layer) in enumerate(model_tensor_plan(config)):
        vals = _standard_normal(np.random.SeedSequence((seed, idx)), shape.size)
        vals = vals.astype(np.float32).reshape(shape.rows, shape.cols)
        yield DenseTensor(shape=shape, values=vals, role=role, name=name, layer=layer)


def make_model(config: ModelConfig, seed: int) -> list[DenseTensor]:
    """Generate every weight tensor of a synthetic model."""
    return list(iter_model(config, seed))
