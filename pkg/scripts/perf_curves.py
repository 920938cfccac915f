#!/usr/bin/env python3
"""Roofline cost curves for draft-tree verification on a 7B-class transformer.

Prints, for each requested batch size, the modeled relative forward-pass cost
as the speculation length s_q grows, at a short and a long KV-cache length.
Also reports the free speculation budget (the b*s_q product below which the
projection matmuls stay memory-bound) and the grid point where each curve
enters its final steep regime.

Usage:
    python3 scripts/perf_curves.py
    python3 scripts/perf_curves.py --batches 1,8,64 --s-max 64 --kv 1024,10000
"""

from __future__ import annotations

import argparse

from specdraft.perf_model import (
    HardwareSpec,
    ModelSpec,
    forward_time,
    free_budget,
    load_hardware_spec,
    load_model_spec,
    relative_cost,
    slope_breakpoint,
)

S_POINTS = (1, 2, 4, 8, 16, 32, 64)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batches", default="1,8,64")
    ap.add_argument("--kv", default="1024,10000", help="two s_kv values: short,long")
    ap.add_argument("--s-max", type=int, default=64, help="breakpoint search grid end")
    ap.add_argument("--model", default=None, help="optional key=value model file")
    ap.add_argument("--hardware", default=None, help="optional key=value hardware file")
    args = ap.parse_args(argv)

    m = load_model_spec(args.model) if args.model else ModelSpec(
        h=4096, n=32, d=128, h_mlp=11008, n_layers=32
    )
    hw = load_hardware_spec(args.hardware) if args.hardware else HardwareSpec(
        peak_flops=280e12, mem_bandwidth=0.8e12
    )
    batches = [int(tok) for tok in args.batches.split(",")]
    kv_short, kv_long = (int(tok) for tok in args.kv.split(","))

    print(f"model: h={m.h} n={m.n} d={m.d} h_mlp={m.h_mlp} layers={m.n_layers}")
    print(f"hardware: {hw.peak_flops / 1e12:.0f} TFLOP/s, {hw.mem_bandwidth / 1e12:.2f} TB/s")
    print(f"free speculation budget b*s_q = {free_budget(hw, m):.1f}")
    print()

    for b in batches:
        grid = list(range(1, args.s_max + 1))
        print(f"batch {b}  (relative cost vs s_q=1)")
        print(f"{'s_q':>5} {f's_kv={kv_short}':>12} {f's_kv={kv_long}':>12}")
        for s in (p for p in S_POINTS if p <= args.s_max):
            short = relative_cost(hw, m, b, s, kv_short)
            long_ = relative_cost(hw, m, b, s, kv_long)
            print(f"{s:>5} {short:>12.4f} {long_:>12.4f}")
        for kv in (kv_short, kv_long):
            times = [forward_time(hw, m, b, s, kv) for s in grid]
            print(f"  steep regime from s_q = {slope_breakpoint(grid, times):g} at s_kv={kv}")
        print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
