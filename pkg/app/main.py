"""
Command-line application: subcommands mesh, hierarchy, solve and study.
Exit codes: 0 success, 1 usage/config error, 2 non-convergence or
factorization failure, 3 mesh/hierarchy validity error.
"""
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.core.config import LOG_LEVEL
from app.core.exceptions import DGError, UsageError
from app.core.logging import configure_logging, get_logger
from app.routers import hierarchy, mesh, solve, study

logger = get_logger(__name__)


class CommandParser(argparse.ArgumentParser):
    """argparse parser reporting bad flags as UsageError (exit 1) instead of exiting with 2"""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> CommandParser:
    parser = CommandParser(
        prog="run.py",
        description="Agglomeration multigrid for interior penalty DG on polygonal meshes",
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)

    # Including my subcommands
    for router in (mesh, hierarchy, solve, study):
        router.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        return args.handler(args)
    except DGError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.detail)
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return UsageError.exit_code
