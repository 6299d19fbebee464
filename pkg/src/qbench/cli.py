"""Command-line surface: quantize, dequantize, inspect, imatrix, bench, sweep, report.

Exit codes are stable: 0 ok, 2 usage, 3 I/O, 4 codec, 5 data.  Every
command echoes its fully resolved configuration on one line before doing
work, and every command is deterministic for fixed flags and seeds
except for measured timing fields.

Model configs are JSON files whose keys name ModelConfig fields:

    {"label": "tiny", "n_layers": 2, "d_model": 64,
     "d_ffn": 128, "n_heads": 2, "vocab_proxy": 256}

Benchmark output is one JSON object per line: the cell context (model,
scheme, bpw, input_len, output_len, seed, rmse, mem_bytes) plus the
phase record fields (phase, tokens, wall_time, flops, bytes,
peak_resident_bytes, cpu_time, workers, trial_index).  Warmup records
carry negative trial_index.  The companion CSV uses the fixed report
header; degradation ratios are printed to stdout because the CSV schema
is pinned.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import types
from pathlib import Path

from .bench import degradation_comm, degradation_comp
from .codecs.container import read_container, write_container
from .codecs.schemes import Scheme, bpw, parse_scheme
from .codecs.tensorops import dequantize_tensor, quantize_tensor, round_trip_rmse
from .errors import DataError, IoError, QbenchError, UsageError
from .imatrix import read_imatrix, synth_imatrix, write_imatrix
from .report import (
    ReportTable,
    emit_csv,
    pareto_table,
    sweep,
    table_from_records,
)
from .tensor import ModelConfig, Workload

_RECORD_FIELDS = (
    "model", "scheme", "bpw", "input_len", "output_len", "seed", "rmse",
    "mem_bytes", "phase", "tokens", "wall_time", "flops", "bytes",
    "peak_resident_bytes", "cpu_time", "workers", "trial_index",
)


def _echo_config(command: str, args: argparse.Namespace) -> None:
    pairs = sorted(
        (k, v) for k, v in vars(args).items() if k != "func" and not k.startswith("_")
    )
    rendered = " ".join(f"{k}={v}" for k, v in pairs)
    print(f"qbench {command}: {rendered}")


def load_model_config(path: str) -> ModelConfig:
    """Parse a JSON model config; unknown or missing fields are usage errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read model config '{path}': {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"model config '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"model config '{path}' must be a JSON object")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(f"model config '{path}': unknown fields {unknown}")
    try:
        return ModelConfig(**doc)
    except TypeError as exc:
        raise UsageError(f"model config '{path}': {exc}") from exc


def _parse_schemes(spec: str) -> list[Scheme]:
    names = [s for s in spec.split(",") if s.strip()]
    if not names:
        raise UsageError("no schemes given")
    return [parse_scheme(n) for n in names]


def _parse_int_list(spec: str, what: str) -> list[int]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(int(part))
        except ValueError:
            raise UsageError(f"{what}: '{part}' is not an integer") from None
    if not out:
        raise UsageError(f"{what}: empty list")
    return out


# --------------------------------------------------------------------------
# Codec commands


def cmd_quantize(args: argparse.Namespace) -> int:
    _echo_config("quantize", args)
    scheme = parse_scheme(args.scheme)
    tensors = read_container(args.infile)
    weights_by_name = read_imatrix(args.imatrix) if args.imatrix else None
    out = []
    print(f"{'tensor':<28} {'bpw':>8} {'rmse':>12}")
    for qt in tensors:
        dense = dequantize_tensor(qt)
        w = None if weights_by_name is None else weights_by_name.get(dense.name)
        new = quantize_tensor(dense, scheme, w)
        err = round_trip_rmse(dense, scheme, w)
        out.append(new)
        layout_bpw = float(bpw(scheme, dense.role, dense.layer))
        print(f"{dense.name:<28} {layout_bpw:>8.4f} {err:>12.6g}")
    write_container(out, args.out)
    total = sum(int(t.payload.size) for t in out)
    print(f"wrote {args.out}: {len(out)} tensors, {total} payload bytes, "
          f"scheme {scheme.name}")
    return 0


def cmd_dequantize(args: argparse.Namespace) -> int:
    _echo_config("dequantize", args)
    tensors = read_container(args.infile)
    out = [quantize_tensor(dequantize_tensor(qt), Scheme.FP16) for qt in tensors]
    write_container(out, args.out)
    print(f"wrote {args.out}: {len(out)} tensors as FP16")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    _echo_config("inspect", args)
    tensors = read_container(args.infile)
    print(f"{'tensor':<28} {'scheme':<6} {'role':<16} {'shape':<12} "
          f"{'bpw':>8} {'bytes':>12}")
    total = 0
    for qt in tensors:
        total += int(qt.payload.size)
        shape = f"{qt.shape.rows}x{qt.shape.cols}"
        print(f"{qt.name:<28} {qt.scheme.name:<6} {qt.role.name.lower():<16} "
              f"{shape:<12} {float(qt.layout.bpw):>8.4f} {qt.payload.size:>12}")
    print(f"total: {len(tensors)} tensors, {total} payload bytes")
    return 0


def cmd_imatrix(args: argparse.Namespace) -> int:
    _echo_config("imatrix", args)
    if (args.infile is None) == (args.model_config is None):
        raise UsageError("imatrix needs exactly one of --in or --model-config")
    if args.infile is not None:
        shapes = [types.SimpleNamespace(name=qt.name, shape=qt.shape)
                  for qt in read_container(args.infile)]
    else:
        from .tensor import model_tensor_plan

        config = load_model_config(args.model_config)
        shapes = [types.SimpleNamespace(name=name, shape=shape)
                  for name, _, shape, _ in model_tensor_plan(config)]
    mats = synth_imatrix(shapes, samples=args.samples, seed=args.seed)
    write_imatrix(mats, args.out)
    print(f"wrote {args.out}: {len(mats)} importance matrices, "
          f"{args.samples} samples each")
    return 0


# --------------------------------------------------------------------------
# Benchmark commands


def _write_jsonl(records: list[dict], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                line = {k: rec[k] for k in _RECORD_FIELDS}
                fh.write(json.dumps(line) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write JSONL '{path}': {exc}") from exc


def _print_degradations(table: ReportTable) -> None:
    """Case-1 (decode, scheme vs FP16) and Case-2 (prefill, shortest vs longest)."""
    decode = [r for r in table.rows if r.phase == "decode"]
    prefill = [r for r in table.rows if r.phase == "prefill"]
    by_cell = {(r.model, r.scheme, r.input_len): r for r in decode}
    models = sorted({r.model for r in decode})
    for model in models:
        input_lens = sorted({r.input_len for r in decode if r.model == model})
        schemes = sorted({r.scheme for r in decode if r.model == model})
        for ilen in input_lens:
            fp16 = by_cell.get((model, "FP16", ilen))
            if fp16 is None:
                continue
            for scheme in schemes:
                if scheme == "FP16":
                    continue
                row = by_cell.get((model, scheme, ilen))
                if row is None or row.tps_mean <= 0:
                    continue
                d = degradation_comm(row.tps_mean, fp16.tps_mean)
                print(f"degradation_comm(decode, {model}, in={ilen}): "
                      f"FP16 vs {scheme} = {d:.4f}")
    pre_cell = {(r.model, r.scheme, r.input_len): r for r in prefill}
    for model in sorted({r.model for r in prefill}):
        input_lens = sorted({r.input_len for r in prefill if r.model == model})
        if len(input_lens) < 2:
            continue
        short, long_ = input_lens[0], input_lens[-1]
        for scheme in sorted({r.scheme for r in prefill if r.model == model}):
            a = pre_cell.get((model, scheme, short))
            b = pre_cell.get((model, scheme, long_))
            if a is None or b is None or a.tps_mean <= 0:
                continue
            d = degradation_comp(a.tps_mean, b.tps_mean)
            print(f"degradation_comp(prefill, {model}, {scheme}): "
                  f"in{short} vs in{long_} = {d:.4f}")


def _run_grid(args: argparse.Namespace, config_paths: list[str]) -> int:
    models = [load_model_config(p) for p in config_paths]
    schemes = _parse_schemes(args.schemes)
    input_lens = _parse_int_list(args.input_lens, "--input-lens")
    workloads = [Workload(input_len=n, output_len=args.output_len, seed=args.seed)
                 for n in input_lens]
    records: list[dict] = []
    table = sweep(models, schemes, workloads, warmup=args.warmup,
                  trials=args.trials, seed=args.seed, records_out=records,
                  progress=print)
    _write_jsonl(records, args.jsonl)
    csv_path = str(Path(args.jsonl).with_suffix(".csv"))
    emit_csv(table, csv_path)
    print(f"wrote {args.jsonl}: {len(records)} records")
    print(f"wrote {csv_path}: {len(table.rows)} rows")
    for f in table.failures:
        print(f"cell failed: {f.model} {f.scheme} in={f.input_len} "
              f"out={f.output_len}: {f.error}", file=sys.stderr)
    _print_degradations(table)
    if not table.rows:
        raise DataError("every benchmark cell failed")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    _echo_config("bench", args)
    return _run_grid(args, [args.model_config])


def cmd_sweep(args: argparse.Namespace) -> int:
    _echo_config("sweep", args)
    return _run_grid(args, args.model_config)


def cmd_report(args: argparse.Namespace) -> int:
    _echo_config("report", args)
    try:
        with open(args.infile, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read records '{args.infile}': {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"record at line {lineno}: invalid JSON: {exc}") from None
        if not isinstance(rec, dict):
            raise DataError(f"record at line {lineno}: not a JSON object")
        missing = [k for k in _RECORD_FIELDS if k not in rec]
        if missing:
            raise DataError(f"record at line {lineno}: missing fields {missing}")
        try:
            rec["tokens"] = int(rec["tokens"])
            rec["wall_time"] = float(rec["wall_time"])
            rec["trial_index"] = int(rec["trial_index"])
            rec["input_len"] = int(rec["input_len"])
            rec["output_len"] = int(rec["output_len"])
            rec["rmse"] = float(rec["rmse"])
            rec["mem_bytes"] = int(rec["mem_bytes"])
            rec["bpw"] = float(rec["bpw"])
            if rec["wall_time"] <= 0:
                raise ValueError(f"wall_time must be > 0, got {rec['wall_time']}")
        except (TypeError, ValueError) as exc:
            raise DataError(f"record at line {lineno}: {exc}") from None
        records.append(rec)
    table = table_from_records(records)
    emit_csv(table, args.csv)
    print(f"wrote {args.csv}: {len(table.rows)} rows")
    if args.pareto:
        frontier = pareto_table(table)
        emit_csv(frontier, args.pareto)
        print(f"wrote {args.pareto}: {len(frontier.rows)} frontier rows")
    return 0


# --------------------------------------------------------------------------
# Parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbench",
        description="Block-quantization codec and throughput benchmark toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="re-encode a container under a scheme")
    p.add_argument("--in", dest="infile", required=True, help="input QBF1 container")
    p.add_argument("--out", required=True, help="output QBF1 container")
    p.add_argument("--scheme", required=True, help="target scheme name")
    p.add_argument("--imatrix", default=None, help="optional QIM1 importance file")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="decode a container back to FP16")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("inspect", help="describe a container's tensors")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("imatrix", help="write a synthetic importance matrix file")
    p.add_argument("--in", dest="infile", default=None,
                   help="QBF1 container supplying tensor shapes")
    p.add_argument("--model-config", default=None,
                   help="JSON model config supplying tensor shapes")
    p.add_argument("--out", required=True, help="output QIM1 file")
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_imatrix)

    def add_bench_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--schemes", required=True,
                       help="comma-separated scheme names")
        p.add_argument("--input-lens", default="64,128,256,512")
        p.add_argument("--output-len", type=int, default=1024)
        p.add_argument("--trials", type=int, default=3)
        p.add_argument("--warmup", type=int, default=3)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jsonl", required=True,
                       help="output JSON-lines path; CSV written alongside")

    p = sub.add_parser("bench", help="benchmark one model over a scheme grid")
    p.add_argument("--model-config", required=True, help="JSON model config")
    add_bench_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="benchmark several models over a grid")
    p.add_argument("--model-config", action="append", required=True,
                   help="JSON model config (repeatable)")
    add_bench_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate JSON-lines records into CSV")
    p.add_argument("--in", dest="infile", required=True, help="JSON-lines input")
    p.add_argument("--csv", required=True, help="output CSV path")
    p.add_argument("--pareto", default=None,
                   help="optional per-phase Pareto frontier CSV path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("error: out of memory", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
