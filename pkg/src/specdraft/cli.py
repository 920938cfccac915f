"""Command-line front end.

Subcommands::

    build-datastore   index token files into a datastore file
    simulate          replay a JSONL dataset against a datastore
    calibrate         grid-search fusion knobs on a dataset
    plan              roofline cost table, free budget, optimal s_q
    bench-retrieval   time batched drafting at several thread counts
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from typing import Sequence

import numpy as np

from . import datastore as ds_mod
from . import harness, kvconfig, perf_model
from .fusion import _FLOAT_KEYS, _INT_KEYS, FusionConfig, calibrate


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _load_config(path: str | None) -> FusionConfig:
    if path is None:
        return FusionConfig()
    return FusionConfig.from_file(path)


def _cmd_build_datastore(args: argparse.Namespace) -> int:
    streams = []
    for i, path in enumerate(args.inputs):
        if i > 0 and args.separator is not None:
            streams.append(np.array([args.separator], dtype="<u4"))
        streams.append(ds_mod.read_corpus(path))
    corpus = np.concatenate(streams) if len(streams) > 1 else streams[0]
    store = ds_mod.build(corpus, vocab_size=args.vocab_size)
    store.save(args.out)
    print(f"wrote {args.out}: {store.n_tokens} tokens", file=sys.stderr)
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    store = ds_mod.load(args.datastore)
    dataset = harness.load_dataset(args.data)
    cfg = _load_config(args.config)
    if args.sweep:
        reports = harness.sweep(
            dataset, store, cfg, args.sweep,
            sources=args.sources, separator=args.separator, threads=args.threads,
        )
        payload = {
            "config": cfg.to_kv(),
            "sources": args.sources,
            "sweep": [
                {"s_q": s, **reports[s].to_dict()["aggregate"]} for s in sorted(reports)
            ],
        }
        if args.curve_out:
            harness.write_curve_csv(args.curve_out, reports)
    else:
        report = harness.simulate(
            dataset, store, cfg,
            sources=args.sources, separator=args.separator, threads=args.threads,
        )
        payload = report.to_dict()
    text = json.dumps(payload, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _parse_grid(path: str, base: FusionConfig) -> list[FusionConfig]:
    """Expand a key-value file whose values may be comma-separated lists
    into the cartesian product of configs, in key order of the file."""
    items = kvconfig.read_kv(path)
    keys = list(items)
    options: list[list[str]] = [[v.strip() for v in items[k].split(",") if v.strip()] for k in keys]
    configs: list[FusionConfig] = []
    for combo in itertools.product(*options):
        configs.append(FusionConfig.from_kv(dict(zip(keys, combo)), base=base))
    return configs


def _cmd_calibrate(args: argparse.Namespace) -> int:
    store = ds_mod.load(args.datastore)
    dataset = harness.load_dataset(args.data)
    base = _load_config(args.config)
    grid = _parse_grid(args.grid, base)
    best = calibrate(dataset, store, grid, sources=args.sources, separator=args.separator)
    if args.out:
        best.to_file(args.out)
    print(kvconfig.format_kv(best.to_kv()), end="")
    return 0


def _cmd_plan(args: argparse.Namespace) -> int:
    model = perf_model.load_model_spec(args.model)
    hw = perf_model.load_hardware_spec(args.hardware)
    s_values = list(range(1, args.max_s_q + 1))
    times = [perf_model.forward_time(hw, model, args.batch, s, args.s_kv) for s in s_values]
    base = times[0]
    lines = ["s_q,flops,bytes,est_time,relative_cost"]
    for s, t in zip(s_values, times):
        table = perf_model.op_costs(model, args.batch, s, args.s_kv)
        flops = model.n_layers * sum(r.flops for r in table.rows().values())
        nbytes = model.n_layers * sum(r.bytes_read + r.bytes_written for r in table.rows().values())
        lines.append(f"{s},{flops!r},{nbytes!r},{t!r},{t / base!r}")
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        print(csv_text, end="")
    print(f"free_budget_b_sq = {perf_model.free_budget(hw, model)!r}")
    print(f"slope_breakpoint_s_q = {perf_model.slope_breakpoint(s_values, times)}")
    if args.accept_curve:
        accept = harness.read_accept_curve(args.accept_curve)
        costs = perf_model.cost_curve(hw, model, args.batch, sorted(accept), args.s_kv)
        s_star, speedup = perf_model.expected_speedup(accept, costs)
        print(f"s_q_star = {s_star}")
        print(f"speedup_star = {speedup!r}")
    return 0


def _cmd_bench_retrieval(args: argparse.Namespace) -> int:
    store = ds_mod.load(args.datastore)
    dataset = harness.load_dataset(args.data)
    contexts = [rec.prompt + rec.reference for rec in dataset]
    cfg = _load_config(args.config)
    report = harness.bench_retrieval(
        store, contexts, cfg, args.batch_sizes, args.threads,
        repeats=args.repeats, sources=args.sources, separator=args.separator,
    )
    lines = ["batch_size,threads,repeat,seconds,ms_per_request"]
    for row in report.rows:
        lines.append(f"{row.batch_size},{row.threads},{row.repeat},{row.seconds!r},{row.ms_per_request!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    for batch, digests in sorted(report.digest_by_batch().items()):
        status = "identical" if len(digests) == 1 else "DIVERGENT"
        print(f"batch {batch}: drafts across thread counts: {status}")
    return 0 if all(len(d) == 1 for d in report.digest_by_batch().values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdraft", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-datastore", help="index token files into a datastore")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="token files: raw little-endian u32 (.tok) or decimal text")
    p.add_argument("--out", required=True, help="datastore output path")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--separator", type=int, default=None,
                   help="token id inserted between input files")
    p.set_defaults(func=_cmd_build_datastore)

    p = sub.add_parser("simulate", help="replay a dataset against a datastore")
    p.add_argument("--datastore", required=True)
    p.add_argument("--data", required=True, help="JSONL dataset of prompt/reference records")
    p.add_argument("--config", default=None, help="fusion config file")
    p.add_argument("--sweep", type=_int_list, default=None,
                   help="comma-separated speculation lengths to sweep")
    p.add_argument("--curve-out", default=None, help="acceptance-curve CSV (with --sweep)")
    p.add_argument("--report", default=None, help="JSON report path (default: stdout)")
    p.add_argument("--sources", choices=harness.SOURCE_MODES, default="both")
    p.add_argument("--separator", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="grid-search fusion knobs")
    p.add_argument("--datastore", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True,
                   help="key-value file; comma-separated values expand to a grid")
    p.add_argument("--config", default=None, help="base config for unlisted keys")
    p.add_argument("--out", default=None, help="write the winning config here")
    p.add_argument("--sources", choices=harness.SOURCE_MODES, default="both")
    p.add_argument("--separator", type=int, default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("plan", help="roofline cost table and optimal s_q")
    p.add_argument("--model", required=True, help="model spec file (h, n, d, h_mlp, n_layers, ...)")
    p.add_argument("--hardware", required=True, help="hardware spec file (peak_flops, mem_bandwidth)")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--s-kv", type=int, default=1024)
    p.add_argument("--max-s-q", type=int, default=64)
    p.add_argument("--accept-curve", default=None, help="acceptance-curve CSV from simulate --sweep")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("bench-retrieval", help="time batched drafting")
    p.add_argument("--datastore", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--batch-sizes", type=_int_list, default=[1, 8])
    p.add_argument("--threads", type=_int_list, default=[1, 2, 8])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--sources", choices=harness.SOURCE_MODES, default="both")
    p.add_argument("--separator", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench_retrieval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
