"""Simulate a power-packet driven switched reluctance motor.

    ppdrive run --config scenario.yaml --set controller.delta_i=0.2 --out runs/a
    ppdrive sweep --config scenario.yaml --grid grid.yaml --out runs/sweep.csv
    ppdrive print-command-table

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_override
from .harness import load_grid, replace_seed, run_scenario, summary, sweep, write_run
from .plant import NonFinite
from .protocol import DEFAULT_CODEC, code_bits

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _command_table() -> str:
    lines = ["code  header  phase  mode"]
    for bits, cmd in DEFAULT_CODEC.rows():
        lines.append(f"{bits}   1{bits}    {cmd.phase.name}      {cmd.mode.name.lower()}")
    for code in DEFAULT_CODEC.invalid_codes:
        bits = "".join(map(str, code_bits(code)))
        lines.append(f"{bits}   1{bits}    -      invalid")
    return "\n".join(lines)


def _overrides(items: list[str] | None) -> dict:
    return dict(parse_override(s) for s in items or [])


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    if args.seed is not None:
        cfg = replace_seed(cfg, args.seed)
    trace, metrics = run_scenario(cfg)
    out = write_run(args.out or cfg.output.dir, cfg, trace, metrics)
    print(summary(metrics))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    table = sweep(cfg, load_grid(args.grid), jobs=args.jobs)
    out = Path(args.out or Path(cfg.output.dir) / "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    cols = [c for c in ("run", "mean_detection_err", "band_containment", "error") if c in table]
    print(table[cols + [c for c in table.columns if c not in cols and "." in c]].to_string(index=False))
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppdrive", description=__doc__.splitlines()[0])
    p.add_argument("--print-command-table", action="store_true", help="print the header code table and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", help="flat YAML config (dotted keys)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.add_argument("--out", help="output directory (default: output.dir)")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a parameter grid")
    sw.add_argument("--config", help="base config")
    sw.add_argument("--grid", required=True, help="YAML mapping of keys to value lists")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.add_argument("--out", help="aggregated metrics CSV")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    table = sub.add_parser("print-command-table", help="print the header code table")
    table.set_defaults(func=lambda args: print(_command_table()) or EXIT_OK)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_command_table:
        print(_command_table())
        return EXIT_OK
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFinite as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
