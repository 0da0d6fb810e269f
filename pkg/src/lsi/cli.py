"""Command-line interface.

Subcommands: ``forward``, ``invert``, ``sweep``, ``demo-nonuniqueness``,
``verify``.  The output directory defaults to ``--out``, then the
``LSI_OUT_DIR`` environment variable, then ``./out``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .acceptance import verify
from .config import ExperimentConfig
from .runner import run, run_forward, run_nonuniqueness


def _out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get("LSI_OUT_DIR", "out"))


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured noise seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for sweep cells")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lsi",
        description="sup-norm regularised source identification runner")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in [
            ("forward", "solve the forward problem from a config"),
            ("invert", "run one inversion cell (first alpha, first delta)"),
            ("sweep", "run the full (alpha, delta) sweep"),
            ("demo-nonuniqueness", "emit the two-sources demonstration")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="configuration file")
        _add_common(p)

    pv = sub.add_parser("verify", help="run the acceptance criteria")
    _add_common(pv)
    pv.add_argument("--inject-fault", default=None, metavar="NAME",
                    help="force-fail the named criterion (harness self-test)")

    args = parser.parse_args(argv)
    out = _out_dir(args)

    if args.command == "verify":
        return verify(fault=args.inject_fault)

    cfg = ExperimentConfig.from_file(args.config)

    if args.command == "forward":
        err = run_forward(cfg, out)
        print(f"forward solve written to {out}; sup error vs exact field "
              f"{err:.3e}")
        return 0

    if args.command == "demo-nonuniqueness":
        table = run_nonuniqueness(cfg, out)
        print(f"two-sources demonstration written to {out}")
        for key, val in table.items():
            print(f"  {key} = {val:.6e}")
        return 0

    if args.command == "invert":
        cfg.alphas = cfg.alphas[:1]
        cfg.deltas = cfg.deltas[:1]

    record = run(cfg, out, threads=args.threads, seed=args.seed)
    n_rows = len(record.rows)
    print(f"{args.command}: {n_rows} rows written to {out / 'summary.csv'}"
          f" (config {record.config_hash[:12]})")
    if record.errors:
        print(f"{len(record.errors)} cell errors recorded in errors.csv",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
