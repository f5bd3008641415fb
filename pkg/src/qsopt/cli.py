"""Experiment front-end.

Subcommands: protocol (make-random | make-uniform | show), dataset, train,
evaluate, bench.  Exit codes: 0 success, 2 usage/config error, 3
runtime/divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, datasets
from .shbasis import BasisSpec
from .sphere import ProtocolError, electrostatic_protocol, min_pairwise_angle, \
    protocol_read, protocol_write, random_protocol
from .train import MetricsRecord, TrainConfig, TrainedModel, TrainingDiverged, \
    evaluate, load_checkpoint, save_checkpoint, train_joint, write_curve_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

CSV_COLUMNS = ["method", "n", "b", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def version_stamp() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"],
                              capture_output=True, text=True, timeout=5)
        if desc.returncode == 0:
            return f"qsopt-{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"qsopt-{__version__}"


# --- protocol ---------------------------------------------------------------

def cmd_protocol(args) -> int:
    if args.action == "show":
        if not args.file:
            print("error: show requires --file", file=sys.stderr)
            return EXIT_USAGE
        try:
            p = protocol_read(args.file)
        except (ProtocolError, OSError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE if isinstance(e, ProtocolError) else EXIT_IO
        for d in p.directions:
            print(f"theta={d.theta:.6f} phi={d.phi:.6f}")
        if len(p) > 1:
            print(f"min pairwise angle: {math.degrees(min_pairwise_angle(p)):.3f} deg")
        return EXIT_OK
    if args.n is None:
        print("error: --n is required", file=sys.stderr)
        return EXIT_USAGE
    if args.action == "make-random":
        p = random_protocol(args.n, args.seed)
    else:
        p = electrostatic_protocol(args.n, iterations=args.iterations, seed=args.seed)
    try:
        protocol_write(p, args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(p)} directions to {args.out}")
    return EXIT_OK


# --- dataset ----------------------------------------------------------------

def cmd_dataset(args) -> int:
    count = args.train + args.val + args.test
    ratios = [args.train / count, args.val / count, args.test / count]
    if args.protocol:
        protocol = protocol_read(args.protocol)
    else:
        protocol = electrostatic_protocol(args.ndirections,
                                          seed=args.seed)
    bvalues = [float(b) for b in args.b.split(",")]
    band = BasisSpec(args.sh_order) if args.band_limited else None
    try:
        datasets.generate_and_save(args.out, count, ratios, protocol, bvalues,
                                   args.sigma, args.seed, width=args.size,
                                   height=args.size, band_limit=band)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote dataset ({args.train}/{args.val}/{args.test} phantoms, "
          f"b={args.b}) to {args.out}")
    return EXIT_OK


# --- train ------------------------------------------------------------------

def read_train_config(path) -> tuple[TrainConfig, dict]:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise CliError(f"config not found: {path}", EXIT_USAGE)
    try:
        t = parser["train"]
        cfg = TrainConfig(
            n=t.getint("n"),
            epochs=t.getint("epochs", 50),
            lr_sampling=t.getfloat("lr_sampling", 1e-3),
            lr_recon=t.getfloat("lr_recon", 1e-4),
            lambda_tv=t.getfloat("lambda_tv", 2e-7),
            batch_size=t.getint("batch_size", 4),
            seed=t.getint("seed", 0),
            mode=t.get("mode", "learned"),
            hidden=t.getint("hidden", 256),
            sh_order=t.getint("sh_order", 4))
        extra = {
            "dataset": parser["data"]["dataset"],
            "bvalue": parser["data"].getfloat("bvalue", 1000.0),
            "out": parser["output"]["dir"],
        }
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"bad config: {e}", EXIT_USAGE) from e
    return cfg, extra


def _write_run_manifest(out: Path, cfg: TrainConfig, n_full: int, bvalue: float):
    af = n_full / cfg.n
    lines = ["[run]",
             f"version = {version_stamp()}",
             f"mode = {cfg.mode}",
             f"n = {cfg.n}",
             f"nfull = {n_full}",
             f"af = {af:g}",
             f"bvalue = {bvalue:g}",
             f"seed = {cfg.seed}",
             f"epochs = {cfg.epochs}"]
    (out / "run.txt").write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    try:
        cfg, extra = read_train_config(args.config)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    try:
        dataset, protocol, _ = datasets.load_dataset(extra["dataset"])
    except (FileNotFoundError, OSError) as e:
        print(f"error: dataset not found: {e}", file=sys.stderr)
        return EXIT_IO
    b = extra["bvalue"]
    if b not in dataset:
        print(f"error: b={b:g} not in dataset", file=sys.stderr)
        return EXIT_USAGE
    out = Path(extra["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        model = train_joint(cfg, dataset[b], protocol)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        if e.last_model is not None:
            save_checkpoint(e.last_model, out / "last.ckpt")
        return EXIT_RUNTIME
    save_checkpoint(model, out / "last.ckpt")
    save_checkpoint(model.best_model(), out / "best.ckpt")
    protocol_write(model.protocol(), out / "learned.bvec")
    write_curve_csv(model, out / "curve.csv")
    _write_run_manifest(out, cfg, len(protocol), b)
    print(f"trained {cfg.mode} n={cfg.n}; artifacts in {out}")
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------

def write_metrics_csv(records: list[MetricsRecord], path, stamp: str | None = None):
    cols = CSV_COLUMNS + (["version"] if stamp else [])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(cols)
        for r in sorted(records, key=lambda r: (r.method, r.n, r.bvalue)):
            row = [r.method, r.n, f"{r.bvalue:g}",
                   f"{r.psnr_mean:.4f}", f"{r.psnr_std:.4f}",
                   f"{r.ssim_mean:.6f}", f"{r.ssim_std:.6f}"]
            if stamp:
                row.append(stamp)
            writer.writerow(row)


def format_table(records: list[MetricsRecord]) -> str:
    """Aligned text table: one row per method, PSNR/SSIM columns per n."""
    ns = sorted({r.n for r in records})
    methods = sorted({r.method for r in records})
    bvalues = sorted({r.bvalue for r in records})
    lines = []
    for b in bvalues:
        lines.append(f"b = {b:g}")
        header = f"{'method':<16}" + "".join(f"  PSNR n={n:<3}" for n in ns) \
            + "".join(f"  SSIM n={n:<3}" for n in ns)
        lines.append(header)
        for m in methods:
            cells = {r.n: r for r in records if r.method == m and r.bvalue == b}
            row = f"{m:<16}"
            for n in ns:
                row += f"  {cells[n].psnr_mean:>9.2f}" if n in cells else f"  {'-':>9}"
            for n in ns:
                row += f"  {cells[n].ssim_mean:>9.4f}" if n in cells else f"  {'-':>9}"
            lines.append(row)
        lines.append("")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    try:
        dataset, protocol, _ = datasets.load_dataset(args.dataset)
    except (FileNotFoundError, OSError) as e:
        print(f"error: dataset not found: {e}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.identity:
        from .metrics import psnr, ssim
        records = []
        for b, splits in sorted(dataset.items()):
            vals = [(psnr(s.clean.signals, s.clean.signals),
                     ssim(s.clean.signals, s.clean.signals))
                    for s in splits[args.split]]
            ps, ss = zip(*vals)
            records.append(MetricsRecord("identity", 0, float(b),
                                         float(np.mean(ps)), float(np.std(ps)),
                                         float(np.mean(ss)), float(np.std(ss))))
    else:
        try:
            model = load_checkpoint(args.checkpoint, protocol)
        except (OSError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_IO if isinstance(e, OSError) else EXIT_USAGE
        try:
            records = evaluate(model, dataset, split=args.split)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE
    write_metrics_csv(records, out / "metrics.csv")
    table = format_table(records)
    (out / "metrics.txt").write_text(table)
    print(table)
    return EXIT_OK


# --- bench ------------------------------------------------------------------

def run_bench(dataset: dict, protocol, methods, ns, seeds, train_b: float,
              epochs: int, hidden: int, lambda_tv: float = 2e-7,
              batch_size: int = 4) -> list[MetricsRecord]:
    records = []
    for mode in methods:
        for n in ns:
            for seed in seeds:
                cfg = TrainConfig(n=n, epochs=epochs, seed=seed, mode=mode,
                                  hidden=hidden, lambda_tv=lambda_tv,
                                  batch_size=batch_size)
                model = train_joint(cfg, dataset[train_b], protocol)
                records.extend(evaluate(model, dataset,
                                        method=f"{mode}-seed{seed}"))
    return records


def aggregate_over_seeds(records: list[MetricsRecord]) -> list[MetricsRecord]:
    """Mean over seeds for rows sharing (base method, n, b)."""
    groups: dict[tuple, list[MetricsRecord]] = {}
    for r in records:
        base = r.method.split("-seed")[0]
        groups.setdefault((base, r.n, r.bvalue), []).append(r)
    out = []
    for (base, n, b), rs in sorted(groups.items()):
        out.append(MetricsRecord(
            base, n, b,
            float(np.mean([r.psnr_mean for r in rs])),
            float(np.std([r.psnr_mean for r in rs])),
            float(np.mean([r.ssim_mean for r in rs])),
            float(np.std([r.ssim_mean for r in rs]))))
    return out


def cmd_bench(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        print("error: at least one seed is required", file=sys.stderr)
        return EXIT_USAGE
    ns = [int(n) for n in args.n.split(",") if n.strip()]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not ns or not methods:
        print("error: empty benchmark matrix", file=sys.stderr)
        return EXIT_USAGE
    try:
        dataset, protocol, _ = datasets.load_dataset(args.dataset)
    except (FileNotFoundError, OSError) as e:
        print(f"error: dataset not found: {e}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records = run_bench(dataset, protocol, methods, ns, seeds,
                            args.train_b, args.epochs, args.hidden)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    write_metrics_csv(records, out / "bench.csv", stamp=version_stamp())
    summary = aggregate_over_seeds(records)
    write_metrics_csv(summary, out / "bench_summary.csv", stamp=version_stamp())
    table = format_table(summary)
    (out / "bench_summary.txt").write_text(table)
    print(table)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsopt")
    parser.add_argument("--version", action="version", version=version_stamp())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protocol", help="generate or inspect sampling protocols")
    p.add_argument("action", choices=["make-random", "make-uniform", "show"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--out", default="protocol.bvec")
    p.add_argument("--file", help="protocol file for 'show'")
    p.set_defaults(func=cmd_protocol)

    d = sub.add_parser("dataset", help="generate a synthetic phantom dataset")
    d.add_argument("--train", type=int, default=200)
    d.add_argument("--val", type=int, default=24)
    d.add_argument("--test", type=int, default=31)
    d.add_argument("--size", type=int, default=32)
    d.add_argument("--b", default="1000,2000,3000")
    d.add_argument("--sigma", type=float, default=0.02)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--protocol", help="bvec file for the full protocol")
    d.add_argument("--ndirections", type=int, default=90)
    d.add_argument("--band-limited", action="store_true")
    d.add_argument("--sh-order", type=int, default=4)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="run joint sampling/reconstruction training")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--identity", action="store_true",
                   help="sanity mode: score ground truth against itself")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="run the method x n x seed matrix")
    b.add_argument("--dataset", required=True)
    b.add_argument("--methods", default="learned,random-frozen,uniform-frozen")
    b.add_argument("--n", default="3,6,9")
    b.add_argument("--seeds", default="0,1,2")
    b.add_argument("--train-b", type=float, default=1000.0)
    b.add_argument("--epochs", type=int, default=50)
    b.add_argument("--hidden", type=int, default=256)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ProtocolError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
