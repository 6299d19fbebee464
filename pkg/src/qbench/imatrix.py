"""Importance-matrix statistics and importance-weighted block fitting.

Per-column squared activations are accumulated into an ImportanceMatrix;
a block of weights w with per-position mean squared activations a_sq
gets the importance vector

    a_tilde_sq[i] = a_sq[i] * sqrt(sigma2 + w[i]^2),  sigma2 = mean(w^2)

which weights the quantization error objective sum_i a_tilde_sq[i] *
(dequant(q_i) - w_i)^2.  The fit searches 64 geometrically spaced scale
candidates spanning [s_minmax/2, 2*s_minmax]; each candidate's codes are
refit with the closed-form weighted-least-squares (s, m) given codes,
codes recomputed, and refit once more.  The exact min/max fit is always
evaluated as a baseline candidate, so the weighted objective can never
exceed it.  perturbative_refine then walks +-1 code moves
(best-improvement order, params refit after every accepted move).

The exhaustive oracle enumerates every code assignment with its optimal
closed-form parameters; it is exponential in block size and exists to
validate the search on tiny blocks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .errors import CodecError, DataError, IoError
from .numerics import round_half_away
from .tensor import _standard_normal

_GRID = 64
_DEGENERATE_REL = 1e-12

IM_MAGIC = b"QIM1"
IM_VERSION = 1
_MAX_NAME = 1 << 16


@dataclass
class ImportanceMatrix:
    """Per-column running sum of squared activations for one tensor."""

    columns: int
    sum_sq: np.ndarray = None
    sample_count: int = 0

    def __post_init__(self) -> None:
        if self.columns < 1:
            raise DataError(f"importance matrix needs >= 1 column, got {self.columns}")
        if self.sum_sq is None:
            self.sum_sq = np.zeros(self.columns, dtype=np.float64)
        self.sum_sq = np.asarray(self.sum_sq, dtype=np.float64)
        if self.sum_sq.shape != (self.columns,):
            raise DataError("importance matrix sums do not match column count")
        if np.any(self.sum_sq < 0) or self.sample_count < 0:
            raise DataError("importance matrix with negative sums or count")

    def a_sq_mean(self) -> np.ndarray:
        """Mean squared activation per column; all-ones before any sample."""
        if self.sample_count == 0:
            return np.ones(self.columns, dtype=np.float64)
        return self.sum_sq / self.sample_count


def accumulate(m: ImportanceMatrix, activations) -> ImportanceMatrix:
    """Fold one activation vector into the running sums."""
    a = np.asarray(activations, dtype=np.float64)
    if a.shape != (m.columns,):
        raise DataError(
            f"activation length {a.shape} does not match {m.columns} columns"
        )
    if not np.all(np.isfinite(a)):
        raise DataError("activations contain NaN or Inf")
    m.sum_sq += a * a
    m.sample_count += 1
    return m


def accumulate_batch(m: ImportanceMatrix, activations) -> ImportanceMatrix:
    """Fold a (samples, columns) batch; same result as per-row accumulate."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != m.columns:
        raise DataError(f"batch shape {a.shape} does not match {m.columns} columns")
    if not np.all(np.isfinite(a)):
        raise DataError("activations contain NaN or Inf")
    m.sum_sq += (a * a).sum(axis=0)
    m.sample_count += a.shape[0]
    return m


@dataclass(frozen=True)
class BlockWeights:
    """One block's importance vector and its ingredients."""

    w: np.ndarray
    a_sq: np.ndarray
    sigma2: float
    a_tilde_sq: np.ndarray


def block_weights(w, a_sq) -> BlockWeights:
    """Importance per position: a_sq * sqrt(sigma2 + w^2)."""
    w = np.asarray(w, dtype=np.float64)
    a_sq = np.asarray(a_sq, dtype=np.float64)
    if w.shape != a_sq.shape or w.ndim != 1:
        raise DataError(f"block/activation shape mismatch: {w.shape} vs {a_sq.shape}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a_sq))):
        raise DataError("block weights input contains NaN or Inf")
    sigma2 = float(np.mean(w * w))
    a_tilde_sq = a_sq * np.sqrt(sigma2 + w * w)
    return BlockWeights(w=w, a_sq=a_sq, sigma2=sigma2, a_tilde_sq=a_tilde_sq)


def _check_fit_inputs(values, weights, n_bits: int):
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape != w.shape:
        raise DataError(f"value/weight shape mismatch: {v.shape} vs {w.shape}")
    if not 2 <= n_bits <= 8:
        raise DataError(f"n_bits must be in [2, 8], got {n_bits}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
        raise DataError("fit input contains NaN or Inf")
    if np.any(w < 0):
        raise DataError("importance weights must be non-negative")
    return v, w


def _refit_given_codes(q: np.ndarray, v: np.ndarray, w: np.ndarray,
                       asymmetric: bool) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form weighted-least-squares (s, m) for fixed codes.

    Rows are independent blocks.  Degenerate systems (constant codes or a
    single effective position) collapse to s = 0 with m the weighted mean
    (asymmetric) or to s = 0 (symmetric).  A negative asymmetric slope is
    treated as degenerate: the storage format carries unsigned scales and
    the mirrored code assignment reaches the same objective with s >= 0.
    """
    qf = q.astype(np.float64)
    wsum = w.sum(axis=1)
    sq = (w * qf).sum(axis=1)
    sv = (w * v).sum(axis=1)
    sqq = (w * qf * qf).sum(axis=1)
    sqv = (w * qf * v).sum(axis=1)
    if asymmetric:
        det = wsum * sqq - sq * sq
        bad = det <= _DEGENERATE_REL * np.maximum(wsum * sqq, 1e-300)
        safe_det = np.where(bad, 1.0, det)
        s = np.where(bad, 0.0, (wsum * sqv - sq * sv) / safe_det)
        s = np.maximum(s, 0.0)
        safe_w = np.where(wsum == 0.0, 1.0, wsum)
        m = np.where(wsum == 0.0, 0.0, (sv - s * sq) / safe_w)
        return s, m
    safe = np.where(sqq == 0.0, 1.0, sqq)
    s = np.where(sqq == 0.0, 0.0, sqv / safe)
    s = np.maximum(s, 0.0)
    return s, np.zeros_like(s)


def _codes_for(v: np.ndarray, s: np.ndarray, m: np.ndarray,
               lo: int, hi: int) -> np.ndarray:
    s_col = s[:, None]
    shifted = v - m[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(s_col > 0.0, shifted / np.where(s_col == 0.0, 1.0, s_col), 0.0)
    return np.clip(round_half_away(raw), lo, hi).astype(np.int32)


def _objective(q: np.ndarray, s: np.ndarray, m: np.ndarray,
               v: np.ndarray, w: np.ndarray) -> np.ndarray:
    err = q.astype(np.float64) * s[:, None] + m[:, None] - v
    return (w * err * err).sum(axis=1)


def weighted_fit_batch(values: np.ndarray, weights: np.ndarray, n_bits: int,
                       asymmetric: bool = True):
    """Grid-search weighted fit over rows of independent blocks.

    Returns (s, m, codes, objective); m is all zeros for symmetric fits.
    All-zero weight rows fall back to uniform weights.
    """
    v, w = _check_fit_inputs(values, weights, n_bits)
    v = np.atleast_2d(v)
    w = np.atleast_2d(w)
    half = 1 << (n_bits - 1)
    if asymmetric:
        lo, hi = 0, 2 * half - 1
    else:
        lo, hi = -half, half - 1

    row_dead = w.sum(axis=1) == 0.0
    if np.any(row_dead):
        w = np.where(row_dead[:, None], 1.0, w)

    if asymmetric:
        mn = v.min(axis=1)
        s_mm = (v.max(axis=1) - mn) / (2 * half - 1)
        m_mm = mn
    else:
        s_mm = np.abs(v).max(axis=1) / half
        m_mm = np.zeros(v.shape[0])

    # baseline: the exact min/max fit, evaluated under the same objective
    best_q = _codes_for(v, s_mm, m_mm, lo, hi)
    best_s = s_mm.copy()
    best_m = m_mm.copy()
    best_obj = _objective(best_q, best_s, best_m, v, w)

    factors = 0.5 * (4.0 ** (np.arange(_GRID) / (_GRID - 1)))
    for f in factors:
        s_c = s_mm * f
        q = _codes_for(v, s_c, m_mm, lo, hi)
        s_r, m_r = s_c, m_mm
        for _ in range(2):
            s_r, m_r = _refit_given_codes(q, v, w, asymmetric)
            q = _codes_for(v, s_r, m_r, lo, hi)
        obj = _objective(q, s_r, m_r, v, w)
        better = obj < best_obj
        if np.any(better):
            best_obj = np.where(better, obj, best_obj)
            best_s = np.where(better, s_r, best_s)
            best_m = np.where(better, m_r, best_m)
            best_q = np.where(better[:, None], q, best_q)
    return best_s, best_m, best_q, best_obj


def weighted_affine_fit(w, weights, n_bits: int, asymmetric: bool = True):
    """Single-block weighted fit: (scale, min, codes, objective)."""
    v = np.asarray(w, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("weighted_affine_fit expects one non-empty block")
    s, m, q, obj = weighted_fit_batch(v[None, :], np.asarray(weights)[None, :],
                                      n_bits, asymmetric)
    return float(s[0]), float(m[0]), q[0], float(obj[0])


def perturbative_refine(codes, w, weights, s: float, m: float,
                        max_rounds: int, n_bits: int,
                        asymmetric: bool = True):
    """Best-improvement +-1 code search with (s, m) refit per move.

    Each accepted move strictly decreases the objective; the loop stops
    at max_rounds or when no single-code move improves.
    """
    v, wt = _check_fit_inputs(w, weights, n_bits)
    if np.all(wt == 0.0):
        wt = np.ones_like(wt)
    half = 1 << (n_bits - 1)
    lo, hi = (0, 2 * half - 1) if asymmetric else (-half, half - 1)
    q = np.asarray(codes, dtype=np.int32).copy()
    if np.any((q < lo) | (q > hi)):
        raise DataError(f"starting codes outside [{lo}, {hi}]")

    def fit_and_score(qq):
        s_r, m_r = _refit_given_codes(qq[None, :], v[None, :], wt[None, :], asymmetric)
        obj = _objective(qq[None, :], s_r, m_r, v[None, :], wt[None, :])
        return float(s_r[0]), float(m_r[0]), float(obj[0])

    cur_obj = float(np.sum(wt * (q * s + m - v) ** 2))
    for _ in range(max_rounds):
        best = None
        for i in range(q.size):
            for step in (-1, 1):
                nq = q[i] + step
                if nq < lo or nq > hi:
                    continue
                trial = q.copy()
                trial[i] = nq
                s_t, m_t, obj_t = fit_and_score(trial)
                if obj_t < cur_obj and (best is None or obj_t < best[3]):
                    best = (trial, s_t, m_t, obj_t)
        if best is None:
            break
        q, s, m, cur_obj = best
    return q, float(s), float(m), float(cur_obj)


def exhaustive_fit_oracle(w, weights, n_bits: int, asymmetric: bool = True):
    """Brute force over every code assignment with closed-form params.

    Exponential in block size; the validation baseline for tiny blocks.
    """
    v, wt = _check_fit_inputs(w, weights, n_bits)
    if np.all(wt == 0.0):
        wt = np.ones_like(wt)
    half = 1 << (n_bits - 1)
    lo, hi = (0, 2 * half - 1) if asymmetric else (-half, half - 1)
    k = v.size
    if k * n_bits > 16:
        raise DataError(f"oracle explosion: {k} codes of {n_bits} bits")
    best = None
    for assignment in product(range(lo, hi + 1), repeat=k):
        q = np.asarray(assignment, dtype=np.int32)
        s, m = _refit_given_codes(q[None, :], v[None, :], wt[None, :], asymmetric)
        obj = float(_objective(q[None, :], s, m, v[None, :], wt[None, :])[0])
        if best is None or obj < best[3]:
            best = (q, float(s[0]), float(m[0]), obj)
    return best


def check_sum_squared_approx(dim: int, samples: int, seed: int,
                             correlated: bool = False):
    """Monte-Carlo comparison of E[(sum e_i a_i)^2] vs E[sum a_i^2 e_i^2].

    Quantization errors e come from a fixed 4-bit symmetric round trip of
    a seeded Gaussian block; activations are fresh zero-mean draws per
    sample (all equal per sample in correlated mode, where the dropped
    cross terms no longer vanish).
    """
    if dim < 1 or samples < 1:
        raise DataError("dim and samples must be >= 1")
    from .codecs.scalar import dequantize, quantize_symmetric

    block = _standard_normal(np.random.SeedSequence((seed, 0xB10C)), dim)
    codes, scale = quantize_symmetric(block, 4)
    err = dequantize(codes, scale, n_bits=4) - block

    if correlated:
        a = _standard_normal(np.random.SeedSequence((seed, 0xAC71)), samples)
        acts = np.repeat(a[:, None], dim, axis=1)
    else:
        acts = _standard_normal(
            np.random.SeedSequence((seed, 0xAC71)), samples * dim
        ).reshape(samples, dim)

    lhs = float(np.mean((acts @ err) ** 2))
    rhs = float(np.mean((acts * acts) @ (err * err)))
    rel_gap = abs(lhs - rhs) / rhs if rhs != 0.0 else 0.0
    return lhs, rhs, rel_gap


def synth_imatrix(tensors, samples: int, seed: int) -> dict[str, ImportanceMatrix]:
    """Accumulate synthetic Gaussian activations for every tensor."""
    if samples < 1:
        raise DataError("samples must be >= 1")
    out: dict[str, ImportanceMatrix] = {}
    for idx, t in enumerate(tensors):
        cols = t.shape.cols
        m = ImportanceMatrix(cols)
        acts = _standard_normal(
            np.random.SeedSequence((seed, 0xA0A0, idx)), samples * cols
        ).reshape(samples, cols)
        accumulate_batch(m, acts)
        out[t.name] = m
    return out


def write_imatrix(matrices: dict[str, ImportanceMatrix], path) -> None:
    """Serialize name -> ImportanceMatrix as a QIM1 file."""
    parts = [IM_MAGIC, struct.pack("<II", IM_VERSION, len(matrices))]
    for name, m in matrices.items():
        raw = name.encode("utf-8")
        if len(raw) > _MAX_NAME:
            raise CodecError(f"imatrix name of {len(raw)} bytes exceeds {_MAX_NAME}")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<IQ", m.columns, m.sample_count))
        parts.append(np.ascontiguousarray(m.sum_sq, dtype="<f8").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as e:
        raise IoError(f"cannot write imatrix '{path}': {e}") from e


def read_imatrix(path) -> dict[str, ImportanceMatrix]:
    """Parse a QIM1 file."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read imatrix '{path}': {e}") from e

    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if n < 0 or pos + n > len(blob):
            raise CodecError(f"truncated imatrix '{path}': needed {n} bytes for {what}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != IM_MAGIC:
        raise CodecError(f"bad magic in '{path}': not a QIM1 file")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != IM_VERSION:
        raise CodecError(f"unsupported imatrix version {version} in '{path}'")
    count = struct.unpack("<I", take(4, "count"))[0]
    out: dict[str, ImportanceMatrix] = {}
    for i in range(count):
        name_len = struct.unpack("<I", take(4, f"entry {i} name length"))[0]
        if name_len > _MAX_NAME:
            raise CodecError(f"entry {i}: implausible name length {name_len}")
        try:
            name = take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError(f"entry {i}: name is not valid UTF-8") from e
        columns, sample_count = struct.unpack("<IQ", take(12, f"entry {i} header"))
        if columns < 1 or columns > (1 << 28):
            raise CodecError(f"entry {i} ('{name}'): implausible column count {columns}")
        sums = np.frombuffer(take(8 * columns, f"entry {i} sums"), dtype="<f8")
        if not np.all(np.isfinite(sums)) or np.any(sums < 0):
            raise CodecError(f"entry {i} ('{name}'): invalid column sums")
        out[name] = ImportanceMatrix(columns, sums.astype(np.float64),
                                     int(sample_count))
    if pos != len(blob):
        raise CodecError(f"trailing {len(blob) - pos} bytes in imatrix '{path}'")
    return out
