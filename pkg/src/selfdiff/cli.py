"""Command line entry point: ``selfdiff run | list | config | oracle``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex


def _cmd_list(args):
    width = max(len(n) for n, _ in ex.list_experiments())
    for name, desc in ex.list_experiments():
        print(f"{name:<{width}}  {desc}")
    return 0


def _cmd_config(args):
    if args.name not in ex.CANNED:
        print(f"unknown experiment {args.name!r}; see 'selfdiff list'", file=sys.stderr)
        return 2
    sys.stdout.write(ex.CANNED[args.name][1].lstrip("\n"))
    return 0


def _cmd_run(args):
    cfg = ex.load_config(args.config)
    figures = False if args.no_figures else None
    bundle = ex.run_experiment(cfg, out_root=args.out, figures=figures, workers=args.workers)
    print((bundle.out_dir / "summary.txt").read_text(), end="")
    print(f"report written to {bundle.out_dir}")
    if bundle.status == 3:
        print(f"error: {bundle.blowups} of {bundle.n_paths} paths blew up", file=sys.stderr)
    return bundle.status


def _cmd_oracle(args):
    cfg = ex.load_config(args.config)
    times = [float(t) for t in args.times.split(",")] if args.times else None
    header, rows = ex.oracle_table(cfg, times)
    out = Path(args.out) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    ex.write_csv(out / "oracle_table.csv", header, rows)
    print(",".join(header))
    for row in rows:
        print(",".join(ex._fmt_cell(float(v)) for v in row))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="selfdiff",
                                description="Simulate and check self-interacting diffusions.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write its report")
    r.add_argument("config", help="config file or canned experiment name")
    r.add_argument("--out", default=None, help="output root (default: output.dir of the config)")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    r.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: SELFDIFF_THREADS or CPU count)")
    r.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list", help="list canned experiments")
    ls.set_defaults(func=_cmd_list)

    c = sub.add_parser("config", help="print the config text of a canned experiment")
    c.add_argument("name")
    c.set_defaults(func=_cmd_config)

    o = sub.add_parser("oracle", help="tabulate exact moments for a quadratic experiment")
    o.add_argument("config")
    o.add_argument("--times", default=None, help="comma separated times")
    o.add_argument("--out", default="runs")
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
