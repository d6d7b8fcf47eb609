"""Command-line entry point (`airbone`)."""
import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from app.commands import COMMAND_MODULES
from app.commands.common import EXIT_ERROR, common_arguments, emit_error, load_config
from app.config import get_settings
from app.errors import AirBoneError, CorpusIOError

logger = logging.getLogger(__name__)


class JsonArgumentParser(argparse.ArgumentParser):
    """Usage errors go to stderr as JSON, exit code 2."""

    def error(self, message: str):
        body = {"error": "UsageError", "stage": "cli", "message": f"{self.prog}: {message}"}
        sys.stderr.write(json.dumps(body) + "\n")
        self.exit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(
        prog="airbone",
        description="Two-stage air/bone conduction voice authentication: synthesis, "
        "scoring, training and evaluation.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    parents = [common_arguments()]
    for module in COMMAND_MODULES:
        module.register(subparsers, parents)
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    level = get_settings().LOG_LEVEL.upper()
    if getattr(args, "verbose", False):
        level = "DEBUG"
    elif getattr(args, "quiet", False):
        level = "WARNING"
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "handler", None) is None:
        parser.print_help(sys.stderr)
        return EXIT_ERROR
    configure_logging(args)
    try:
        cfg = load_config(args)
        return args.handler(args, cfg)
    except AirBoneError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        emit_error(e)
        return EXIT_ERROR
    except OSError as e:
        emit_error(CorpusIOError(e.filename or "", e.strerror or str(e)))
        return EXIT_ERROR
    except Exception as e:
        logger.debug(f"{args.command} failed unexpectedly", exc_info=True)
        emit_error(AirBoneError(f"{type(e).__name__}: {e}"))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
