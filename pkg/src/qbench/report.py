"""Result aggregation: sweep grids, Pareto frontiers, CSV/JSON emission.

The report row is the unit of exchange: one row per (model, scheme,
phase, input_len) cell with throughput stats, round-trip RMSE, and the
predicted memory footprint.  CSV output is RFC-4180 with the fixed
header

    model,scheme,bpw,phase,input_len,output_len,tps_mean,tps_std,rmse,mem_bytes

sorted by (model, scheme, phase, input_len), float fields as repr so
parse(emit(t)) round-trips exactly.  The JSON mirror carries the same
rows plus the failure markers, which have no place in the fixed CSV
schema.

Pareto dominance is weak dominance with at least one strict objective:
fidelity up, throughput up, memory down.  Mutually non-dominating
duplicates are all retained and input order is preserved.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .bench import memory_footprint, run_benchmark
from .codecs.schemes import Scheme, bpw
from .errors import DataError, IoError, QbenchError, UsageError
from .tensor import ModelConfig, Workload

CSV_HEADER = (
    "model", "scheme", "bpw", "phase", "input_len", "output_len",
    "tps_mean", "tps_std", "rmse", "mem_bytes",
)


@dataclass(frozen=True)
class ParetoPoint:
    """One candidate configuration in objective space."""

    label: str
    fidelity: float
    tps: float
    mem_bytes: int

    def __post_init__(self) -> None:
        for fname in ("fidelity", "tps", "mem_bytes"):
            v = getattr(self, fname)
            if not math.isfinite(v):
                raise DataError(f"pareto point '{self.label}': {fname} is {v}")


@dataclass
class ReportRow:
    model: str
    scheme: str
    bpw: float
    phase: str
    input_len: int
    output_len: int
    tps_mean: float
    tps_std: float
    rmse: float
    mem_bytes: int

    def sort_key(self):
        return (self.model, self.scheme, self.phase, self.input_len)


@dataclass
class SweepFailure:
    """Explicit marker for a grid cell that aborted."""

    model: str
    scheme: str
    input_len: int
    output_len: int
    error: str


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)
    failures: list[SweepFailure] = field(default_factory=list)

    def sorted_rows(self) -> list[ReportRow]:
        return sorted(self.rows, key=ReportRow.sort_key)


# --------------------------------------------------------------------------
# Pareto frontier


def pareto_frontier(points: Iterable[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset under (fidelity up, tps up, mem down).

    A point is dropped iff some other point is at least as good on all
    three objectives and strictly better on one.  Stable: survivors keep
    their input order; exact duplicates survive together.
    """
    pts = list(points)
    n = len(pts)
    if n <= 1:
        return pts
    fid = np.array([p.fidelity for p in pts], dtype=np.float64)
    tps = np.array([p.tps for p in pts], dtype=np.float64)
    mem = np.array([float(p.mem_bytes) for p in pts], dtype=np.float64)
    keep = np.ones(n, dtype=bool)
    chunk = 256
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        weak = (
            (fid[:, None] >= fid[None, lo:hi])
            & (tps[:, None] >= tps[None, lo:hi])
            & (mem[:, None] <= mem[None, lo:hi])
        )
        strict = (
            (fid[:, None] > fid[None, lo:hi])
            | (tps[:, None] > tps[None, lo:hi])
            | (mem[:, None] < mem[None, lo:hi])
        )
        keep[lo:hi] = ~np.any(weak & strict, axis=0)
    return [p for p, k in zip(pts, keep) if k]


def pareto_table(table: ReportTable) -> ReportTable:
    """Frontier rows per phase, on (fidelity=-rmse, tps=tps_mean, mem) axes.

    Rows stay tagged by their phase column, so one CSV carries every
    per-phase frontier.
    """
    out: list[ReportRow] = []
    phases = sorted({r.phase for r in table.rows})
    for phase in phases:
        rows = [r for r in table.rows if r.phase == phase]
        points = [
            ParetoPoint(
                label=f"{r.model}/{r.scheme}/in{r.input_len}",
                fidelity=-r.rmse,
                tps=r.tps_mean,
                mem_bytes=r.mem_bytes,
            )
            for r in rows
        ]
        kept = pareto_frontier(points)
        kept_ids = {id(p) for p in kept}
        out.extend(r for r, p in zip(rows, points) if id(p) in kept_ids)
    return ReportTable(rows=out, failures=[])


# --------------------------------------------------------------------------
# Serialization


def _row_to_strings(row: ReportRow) -> list[str]:
    return [
        row.model,
        row.scheme,
        repr(float(row.bpw)),
        row.phase,
        str(row.input_len),
        str(row.output_len),
        repr(float(row.tps_mean)),
        repr(float(row.tps_std)),
        repr(float(row.rmse)),
        str(row.mem_bytes),
    ]


def emit_csv(table: ReportTable, path: str) -> None:
    """Write the fixed-header CSV, rows sorted, RFC-4180 quoting."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(CSV_HEADER)
            for row in table.sorted_rows():
                writer.writerow(_row_to_strings(row))
    except OSError as exc:
        raise IoError(f"cannot write CSV '{path}': {exc}") from exc


def parse_csv(path: str) -> ReportTable:
    """Read a CSV produced by emit_csv; exact inverse on the row fields."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"CSV '{path}' is empty, expected a header") from None
            if tuple(header) != CSV_HEADER:
                raise DataError(
                    f"CSV '{path}' header {header!r} does not match {list(CSV_HEADER)!r}"
                )
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(CSV_HEADER):
                    raise DataError(
                        f"CSV '{path}' line {lineno}: {len(rec)} fields, "
                        f"expected {len(CSV_HEADER)}"
                    )
                try:
                    rows.append(ReportRow(
                        model=rec[0], scheme=rec[1], bpw=float(rec[2]), phase=rec[3],
                        input_len=int(rec[4]), output_len=int(rec[5]),
                        tps_mean=float(rec[6]), tps_std=float(rec[7]),
                        rmse=float(rec[8]), mem_bytes=int(rec[9]),
                    ))
                except ValueError as exc:
                    raise DataError(f"CSV '{path}' line {lineno}: {exc}") from None
            return ReportTable(rows=rows)
    except OSError as exc:
        raise IoError(f"cannot read CSV '{path}': {exc}") from exc


def emit_json(table: ReportTable, path: str) -> None:
    """JSON mirror of the table, failures included."""
    doc = {
        "rows": [asdict(r) for r in table.sorted_rows()],
        "failures": [asdict(f) for f in table.failures],
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write JSON '{path}': {exc}") from exc


def record_context(model: ModelConfig, scheme: Scheme, workload: Workload,
                   seed: int, rmse: float, mem_bytes: int) -> dict:
    """Cell-identifying fields stored alongside each benchmark record."""
    return {
        "model": model.label,
        "scheme": scheme.name,
        "bpw": float(bpw(scheme)),
        "input_len": workload.input_len,
        "output_len": workload.output_len,
        "seed": seed,
        "rmse": rmse,
        "mem_bytes": mem_bytes,
    }


def table_from_records(records: list[dict]) -> ReportTable:
    """Rebuild a ReportTable from benchmark record dicts.

    Each dict is one measured or warmup phase record plus its cell
    context (the JSON-lines schema).  Warmup records (negative
    trial_index) never contribute to statistics; a cell with only
    warmups yields no row.
    """
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for rec in records:
        key = (rec["model"], rec["scheme"], rec["phase"], rec["input_len"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)
    rows = []
    for key in order:
        recs = [r for r in groups[key] if r["trial_index"] >= 0]
        if not recs:
            continue
        tps = np.array([r["tokens"] / r["wall_time"] for r in recs], dtype=np.float64)
        first = recs[0]
        rows.append(ReportRow(
            model=first["model"], scheme=first["scheme"], bpw=float(first["bpw"]),
            phase=first["phase"], input_len=int(first["input_len"]),
            output_len=int(first["output_len"]),
            tps_mean=float(np.mean(tps)), tps_std=float(np.std(tps)),
            rmse=float(first["rmse"]), mem_bytes=int(first["mem_bytes"]),
        ))
    return ReportTable(rows=rows)


# --------------------------------------------------------------------------
# The sweep grid


def sweep(models: list[ModelConfig], schemes: list[Scheme],
          workloads: list[Workload], *, warmup: int = 3, trials: int = 3,
          seed: int = 0, workers: Optional[int] = None, mode=None,
          records_out: Optional[list] = None,
          progress: Optional[Callable[[str], None]] = None) -> ReportTable:
    """Run the full model x scheme x workload grid.

    Model weights are built once per (model, scheme) pair with the given
    seed and reused across workloads; RMSE is computed once per pair.
    A cell that aborts lands in ``table.failures`` with its error text
    and the grid moves on.  ``records_out`` collects every phase record
    as a JSON-ready dict (context fields plus record fields, warmups
    included).
    """
    from .kernels.simulate import build_quantized_model, model_rmse

    if not models:
        raise UsageError("sweep needs at least one model config")
    if not schemes:
        raise UsageError("sweep needs at least one scheme")
    if not workloads:
        raise UsageError("sweep needs at least one workload")

    def note(msg: str) -> None:
        if progress is not None:
            progress(msg)

    table = ReportTable()
    for config in models:
        for scheme in schemes:
            try:
                qm = build_quantized_model(config, scheme, seed=seed)
                rmse = model_rmse(qm)
            except (QbenchError, MemoryError) as exc:
                for wl in workloads:
                    table.failures.append(SweepFailure(
                        model=config.label, scheme=scheme.name,
                        input_len=wl.input_len, output_len=wl.output_len,
                        error=f"model build failed: {exc}",
                    ))
                note(f"FAIL  {config.label} {scheme.name}: build: {exc}")
                continue
            note(f"built {config.label} {scheme.name} "
                 f"({qm.payload_bytes} payload bytes, rmse {rmse:.6g})")
            for wl in workloads:
                cell_records: list = []
                try:
                    summaries = run_benchmark(
                        qm, workload=wl, warmup=warmup, trials=trials,
                        seed=seed, workers=workers, mode=mode,
                        records_out=cell_records,
                    )
                    mem = memory_footprint(qm, workload=wl)
                except (QbenchError, MemoryError) as exc:
                    table.failures.append(SweepFailure(
                        model=config.label, scheme=scheme.name,
                        input_len=wl.input_len, output_len=wl.output_len,
                        error=str(exc),
                    ))
                    note(f"FAIL  {config.label} {scheme.name} "
                         f"in={wl.input_len} out={wl.output_len}: {exc}")
                    continue
                if records_out is not None:
                    ctx = record_context(config, scheme, wl, seed, rmse, mem)
                    for rec in cell_records:
                        line = dict(ctx)
                        line.update(
                            phase=rec.phase, tokens=rec.tokens,
                            wall_time=rec.wall_time, flops=rec.flops,
                            bytes=rec.bytes,
                            peak_resident_bytes=rec.peak_resident_bytes,
                            cpu_time=rec.cpu_time, workers=rec.workers,
                            trial_index=rec.trial_index,
                        )
                        records_out.append(line)
                for phase in ("prefill", "decode"):
                    s = summaries[phase]
                    table.rows.append(ReportRow(
                        model=s.model, scheme=s.scheme, bpw=float(bpw(scheme)),
                        phase=phase, input_len=wl.input_len,
                        output_len=wl.output_len, tps_mean=s.tps_mean,
                        tps_std=s.tps_std, rmse=rmse, mem_bytes=mem,
                    ))
                note(f"ok    {config.label} {scheme.name} "
                     f"in={wl.input_len} out={wl.output_len} "
                     f"decode_tps={summaries['decode'].tps_mean:.2f}")
    return table
