"""`ta-sim` command line.

    ta-sim run     --config FILE [--seed N] [--trials N] [--out PATH] [--format csv|json]
    ta-sim sweep   --config FILE --axis noise|window|weight_mode|num_sats --values a,b,c
    ta-sim compare --config FILE
    ta-sim crlb    --config FILE

Exit status: 0 on success, 1 when `compare` finds CWLS no faster than the
penalty method, 2 on configuration or estimation errors.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from . import __version__, harness
from .config import config
from .errors import TaSimError
from .models import ExportFormat, SweepAxis

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="scenario TOML file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--trials", type=int, help="override run.trials")
    parser.add_argument("--workers", type=int, help="override run.workers")
    parser.add_argument("--out", help="output file (stdout summary only when omitted)")
    parser.add_argument("--format", choices=[f.value for f in ExportFormat], default=ExportFormat.CSV.value)
    parser.add_argument("--profile-dir", help="directory holding noise calibration profiles")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ta-sim", description="LEO timing-advance estimation simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="logging level (default %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="Monte Carlo campaign for one scenario"))

    sweep = sub.add_parser("sweep", help="campaign per value of one parameter")
    _add_common(sweep)
    sweep.add_argument("--axis", required=True, choices=[a.value for a in SweepAxis])
    sweep.add_argument("--values", required=True, help="comma separated axis values")

    _add_common(sub.add_parser("compare", help="penalty vs CWLS on paired trials"))
    _add_common(sub.add_parser("crlb", help="print the constrained CRLB for the scenario"))
    return parser


def _load(args) -> "harness.ScenarioConfig":
    cfg = harness.load_config(args.config, args.profile_dir)
    return harness.apply_overrides(cfg, seed=args.seed, trials=args.trials, workers=args.workers)


def _print_stats(label: str, stats) -> None:
    median = stats.median_ta_error()
    print(f"{label}: {stats.successes} ok, {stats.failures} failed")
    print(f"  rmse          {_num(stats.rmse)} m")
    print(f"  median |dd|   {_num(median)} m")
    print(f"  mean runtime  {_num(stats.runtime_mean)} s")
    if stats.crlb_trace is not None:
        print(f"  CRLB trace    {_num(stats.crlb_trace)} m^2")


def _num(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def cmd_run(args) -> int:
    cfg = _load(args)
    stats = harness.run_campaign(cfg)
    _print_stats(cfg.scenario.value, stats)
    if stats.ta_errors:
        print(f"  within CP     {stats.fraction_within(cfg.cp_range):.1%}")
    if args.out:
        for path in harness.export(stats, args.out, args.format, cfg):
            print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = harness.parse_sweep_values(args.axis, args.values)
    results = harness.sweep(cfg, args.axis, values)
    for value, stats in results:
        _print_stats(f"{args.axis}={getattr(value, 'value', value)}", stats)
    if args.out:
        for path in harness.export_sweep(results, args.out, args.format, axis=args.axis, cfg=cfg):
            print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    comparison = harness.compare_solvers(cfg)
    for row in (comparison.penalty, comparison.cwls):
        print(f"{row.solver.value:8s} rmse={_num(row.rmse)} m  median |dd|={_num(row.median_ta_err_m)} m  "
              f"runtime={_num(row.runtime_mean)} s  failures={row.failures}")
    print(f"runtime ratio (penalty/CWLS) {_num(comparison.runtime_ratio)}, "
          f"accuracy gap {_num(comparison.accuracy_gap)}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(comparison.model_dump_json(indent=2) + "\n")
        print(f"wrote {args.out}")
    return 0 if comparison.ordering_ok else 1


def cmd_crlb(args) -> int:
    cfg = _load(args)
    report = harness.crlb_report(cfg)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "crlb": cmd_crlb}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TaSimError as e:
        logger.error("%s", e)
        return 2
    except OSError as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
