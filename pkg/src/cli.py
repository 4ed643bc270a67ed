import argparse
import os
import sys
from pathlib import Path

from loguru import logger

from acceptance import CHECKS, verify
from config import ConfigError, RunConfig, load_config, load_preset, preset_names
from model import ModelError
from orchestrator import OrchestrationError, Orchestrator
from writers.table_writer import render_table

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EPILOG = """examples:
  %(prog)s simulate fig2 --out output/fig2
  %(prog)s diff src/presets/fig9.toml --threads 4
  %(prog)s balance fig2 --stride 1
  %(prog)s cbit-report fig24 --normalization relative
  %(prog)s verify homogeneous

A config is a TOML file or the name of a shipped preset ({presets}).
Environment: WAVEINFO_OUT_DIR, WAVEINFO_THREADS, WAVEINFO_LOG_LEVEL.
"""


def _configure_logging(quiet: bool) -> None:
    logger.remove()
    level = "WARNING" if quiet else os.getenv("WAVEINFO_LOG_LEVEL", "INFO").upper()
    logger.add(sys.stderr, level=level)


def _load(name: str) -> RunConfig:
    if Path(name).suffix == ".toml" or Path(name).exists():
        return load_config(name)
    return load_preset(name)


def cmd_stage(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    orchestrator = Orchestrator.build(
        cfg,
        out_dir=args.out,
        threads=args.threads,
        stride=args.stride,
        normalization=args.normalization,
    )
    bundle = orchestrator.run(args.stage)
    if bundle.cbit is not None:
        print(render_table(orchestrator.cbit_table(bundle)), end="")
    print(f"{bundle.simulations} simulation(s), {len(bundle.files)} file(s) in {orchestrator.out_dir}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    report = verify(args.preset, out_dir=args.out, threads=args.threads)
    print(render_table(report.table()), end="")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waveinfo",
        description="1D elastic wave simulations and the structural information they carry",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG.format(presets=", ".join(preset_names())),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=str, default=None, help="output directory (default: config or WAVEINFO_OUT_DIR)")
    common.add_argument("--threads", type=int, default=None, help="concurrent simulations (default: WAVEINFO_THREADS or 1)")
    common.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    stages = {
        "simulate": ("simulate", "Run the base model and write sensors, energy and snapshots"),
        "diff": ("diff", "Also run each +/- pair and write difference and differential fields"),
        "balance": ("balance", "Also compute information fields, traces and the balance residual"),
        "cbit-report": ("cbit", "Also compute sensor-side information and the Cbit report"),
    }
    for command, (stage, help_text) in stages.items():
        p = sub.add_parser(command, parents=[common], help=help_text, description=help_text)
        p.add_argument("config", help="TOML config file or preset name")
        p.add_argument("--stride", type=int, default=None, help="snapshot stride override (1 for balance residuals)")
        p.add_argument("--normalization", choices=["absolute", "relative"], default=None)
        p.set_defaults(func=cmd_stage, stage=stage)

    pv = sub.add_parser("verify", parents=[common], help="Run the acceptance checks of a shipped preset")
    pv.add_argument("preset", choices=sorted(CHECKS))
    pv.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except OrchestrationError as e:
        cause = e.__cause__
        if isinstance(cause, (ConfigError, ModelError)):
            logger.error(f"Configuration error: {e}")
            return EXIT_CONFIG
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
