#!/usr/bin/env python3
"""Run the default desk-scale benchmark and write the comparison CSVs.

Trains the learned and random-frozen methods for n in {3, 6, 9} with 3 seeds
on the frozen synthetic dataset, evaluates at b-analogs 1000/2000/3000, and
writes bench.csv / bench_summary.csv under --out.  Takes ~20 minutes on a
laptop CPU.
"""

import argparse
import time
from pathlib import Path

from qsopt.benchmark import BenchmarkSpec, benchmark_dataset, benchmark_protocol, \
    run_benchmark
from qsopt.cli import aggregate_over_seeds, format_table, version_stamp, \
    write_metrics_csv


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="bench_out")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--methods", default=None,
                        help="comma-separated subset of learned,random-frozen,uniform-frozen")
    args = parser.parse_args()

    spec = BenchmarkSpec()
    overrides = {}
    if args.epochs:
        overrides["epochs"] = args.epochs
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if overrides:
        from dataclasses import replace
        spec = replace(spec, **overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    protocol = benchmark_protocol(spec)
    dataset = benchmark_dataset(spec, protocol)
    print(f"dataset ready ({time.time() - t0:.0f}s)")

    def progress(mode, n, seed, recs):
        r = recs[0]
        print(f"{mode} n={n} seed={seed}: psnr={r.psnr_mean:.2f} "
              f"ssim={r.ssim_mean:.4f} ({time.time() - t0:.0f}s elapsed)",
              flush=True)

    records = run_benchmark(spec, protocol, dataset, progress=progress)
    write_metrics_csv(records, out / "bench.csv", stamp=version_stamp())
    summary = aggregate_over_seeds(records)
    write_metrics_csv(summary, out / "bench_summary.csv", stamp=version_stamp())
    table = format_table(summary)
    (out / "bench_summary.txt").write_text(table)
    print(table)
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
