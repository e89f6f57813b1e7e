import argparse
import logging
from logging.handlers import RotatingFileHandler
import os
import sys
from typing import List, Optional

from app.config import Config
from app.core.errors import CapExceededError, UsageError
from app.services.commands_registry import commands_registry
from app.services.job_config import build_job

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAP = 3


def configure_logging():
    log_dir = Config.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    handler = RotatingFileHandler(f"{log_dir}/app.log", maxBytes=10*1024*1024, backupCount=5)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    handler.setFormatter(formatter)
    stream = logging.StreamHandler()
    stream.setFormatter(formatter)

    # Configure root logger
    logging.basicConfig(level=Config.LOG_LEVEL.upper(), handlers=[handler, stream], force=True)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)  # Reduce noise


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="file of `key = value` lines and dist blocks")
    parser.add_argument("--source", help="file of dist blocks (or a block name from --config)")
    parser.add_argument("--rate", help="rate function, e.g. const:0.4, entropy, j:er=0.1,delta=0.1, omega:ee=0.2")
    parser.add_argument("--metric", help="GLD metric, e.g. matched:beta=1, mismatched:beta=2,tilde=<dist>, mce")
    parser.add_argument("--sweep", help="var:min:max:steps")
    parser.add_argument("--delta", type=float)
    parser.add_argument("--er", type=float)
    parser.add_argument("--ee", type=float)
    parser.add_argument("--n", type=int)
    parser.add_argument("--codes", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epsilon", type=float, help="also run the Z concentration check at this slack")
    parser.add_argument("--out", help=f"output directory (default {Config.OUTPUT_DIR})")
    parser.add_argument("--oracle", action="store_true", default=None,
                        help="solve the outer problem by exhaustive lattice search")
    parser.add_argument("--oracle-step", dest="oracle_step", type=float)
    parser.add_argument("--cross-check", dest="cross_check", action="store_true", default=None,
                        help="also evaluate the typical-random-code form")
    parser.add_argument("--rounds", type=int, help="optimizer refinement rounds")
    parser.add_argument("--coarse", type=int, help="optimizer coarse grid resolution")
    parser.add_argument("--starts", type=int, help="optimizer multi-start count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdbin",
        description="Error and excess-rate exponents of semi-deterministic Slepian-Wolf binning",
        epilog=commands_registry.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    exponent = sub.add_parser("exponent", help="evaluate an exponent formula over a sweep")
    exponent.add_argument("--kind", help="r_gld, er_map, trc_gld, excess_rate, vr_ordinary, fr_random, fr_expurgated")
    _add_common(exponent)

    tradeoff = sub.add_parser("tradeoff", help="error / excess-rate exponent trade-off curves")
    tradeoff.add_argument("--mode", help="e_given_er, er_given_e or e_star")
    _add_common(tradeoff)

    simulate = sub.add_parser("simulate", help="exact small-n simulation of the code ensemble")
    simulate.add_argument("--decoder", help="map, mce, gld or sce")
    _add_common(simulate)

    fig1 = sub.add_parser("fig1", help="fixed-rate vs variable-rate comparison curves (CSV + SVG)")
    _add_common(fig1)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        job = build_job(args.command, flags, args.config)
        for path in commands_registry.execute(args.command, job):
            print(path)
    except CapExceededError as e:
        logging.error(f"Cap exceeded: {e}")
        return EXIT_CAP
    except UsageError as e:
        logging.error(f"Invalid job: {e}")
        return EXIT_USAGE
    return EXIT_OK


def run():
    configure_logging()
    sys.exit(main())


if __name__ == "__main__":
    run()
