"""Command-line entry point: ``fluxsim gen-domains | windows | run | report``."""

import argparse
import asyncio
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from fluxsim.core.config import BYTES_PER_ACCESS, DEFAULT_TLDS, ENV_LOG_LEVEL, ENV_SEED, LOG_FORMAT, SECONDS_PER_ACCESS
from fluxsim.core.dga import CostMode, DgaSeed, WindowConfig, curve_data, divisors, generate_domains, load_dictionary, lookup_cost
from fluxsim.core.errors import ConfigError, FluxsimError
from fluxsim.detection.formatter import format_cost_table, format_percent
from fluxsim.detection.report import render_report
from fluxsim.sim.runner import RunResult, run_scenario
from fluxsim.sim.scenario import parse_scenario

logger = logging.getLogger(__name__)


def _seed_from_env() -> Optional[int]:
    raw = os.getenv(ENV_SEED)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"not an integer: {raw!r}", path=ENV_SEED)


def _betas(text: str) -> List[int]:
    try:
        return [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# --- subcommands ------------------------------------------------------------

def cmd_gen_domains(args) -> int:
    dictionary = load_dictionary(args.dict) if args.dict else None
    domains = generate_domains(DgaSeed.parse(args.seed, args.date), args.alpha, args.tlds, dictionary)
    text = "\n".join(domains) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        logger.info(f"📄 {len(domains)} domains written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def windows_csv(alpha: int, betas: Sequence[int]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["beta", "gamma"])
    writer.writerows(curve_data(alpha, betas))
    return buf.getvalue()


def cmd_windows(args) -> int:
    cfg = WindowConfig(args.alpha, args.beta)
    costs = [lookup_cost(cfg, args.bytes, args.seconds, mode) for mode in CostMode]
    sys.stdout.write(format_cost_table(costs) + "\n")
    betas = args.betas if args.betas is not None else divisors(args.alpha)
    curve = windows_csv(args.alpha, betas)
    if args.csv:
        Path(args.csv).write_text(curve, encoding="utf-8")
        logger.info(f"📈 Window curve written to {args.csv}")
    else:
        sys.stdout.write("\n" + curve)
    return 0


def _run_one(path: str, out_root: Path, many: bool, seed: Optional[int]) -> RunResult:
    scenario = parse_scenario(path, seed_override=seed)
    out_dir = out_root / scenario.name if many else out_root
    return run_scenario(scenario, out_dir)


async def run_many(paths: Sequence[str], out_root: Path, jobs: int, seed: Optional[int] = None) -> List[RunResult]:
    """Run scenarios in worker threads, at most ``jobs`` at a time; one kernel per run."""
    semaphore = asyncio.Semaphore(max(1, jobs))
    many = len(paths) > 1

    async def run(path: str) -> RunResult:
        async with semaphore:
            return await asyncio.to_thread(_run_one, path, out_root, many, seed)

    return await asyncio.gather(*(run(p) for p in paths))


def cmd_run(args) -> int:
    seed = args.seed if args.seed is not None else _seed_from_env()
    out_root = Path(args.out)
    if len(args.scenarios) == 1 or args.jobs <= 1:
        results = [_run_one(p, out_root, len(args.scenarios) > 1, seed) for p in args.scenarios]
    else:
        results = asyncio.run(run_many(args.scenarios, out_root, args.jobs, seed))
    for result in results:
        mark = "PASS" if result.passed else "FAIL"
        sys.stdout.write(f"{mark} {result.name} -> {result.out_dir}\n")
    return 0 if all(r.passed for r in results) else 1


def cmd_report(args) -> int:
    report = render_report(Path(args.dir))
    sys.stdout.write(
        f"hosts={len(report.hosts)} regularity_flagged={report.flagged('regularity_flag')} "
        f"persistence_flagged={report.flagged('persistence_flag')} nxdomain_flagged={report.flagged('nxdomain_flag')} "
        f"overhead_percent={format_percent(report.overhead_percent)}\n"
    )
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxsim", description="Deterministic botnet C&C simulator for defensive research")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $FLUXSIM_LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-domains", help="Print the generated domain list")
    gen.add_argument("--seed", required=True, help="Seed string")
    gen.add_argument("--date", required=True, help="Date as YYYY-MM-DD")
    gen.add_argument("--alpha", type=int, required=True, help="Number of domains")
    gen.add_argument("--tlds", nargs="+", default=list(DEFAULT_TLDS), help="TLD list")
    gen.add_argument("--dict", default=None, help="Word list for dictionary labels")
    gen.add_argument("--out", default=None, help="Write to FILE instead of stdout")
    gen.set_defaults(func=cmd_gen_domains)

    win = sub.add_parser("windows", help="Lookup cost table and window-size curve")
    win.add_argument("--alpha", type=int, required=True)
    win.add_argument("--beta", type=int, required=True)
    win.add_argument("--bytes", type=float, default=BYTES_PER_ACCESS, help="Bytes per domain access")
    win.add_argument("--seconds", type=float, default=SECONDS_PER_ACCESS, help="Seconds per domain access")
    win.add_argument("--betas", type=_betas, default=None, help="Comma-separated betas for the curve (default: all divisors)")
    win.add_argument("--csv", default=None, help="Write the curve CSV to FILE")
    win.set_defaults(func=cmd_windows)

    run = sub.add_parser("run", help="Run one or more scenarios")
    run.add_argument("scenarios", nargs="+", help="Scenario files (JSON or YAML)")
    run.add_argument("--out", required=True, help="Output directory")
    run.add_argument("--jobs", type=int, default=1, help="Scenarios run in parallel")
    run.add_argument("--seed", type=int, default=None, help="Override master_seed")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="Re-render report.csv from a run directory")
    rep.add_argument("dir", help="Run directory")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv(ENV_LOG_LEVEL) or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=LOG_FORMAT)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {e}")
        return e.exit_code
    except FluxsimError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
