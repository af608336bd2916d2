import argparse
import logging
import sys
from typing import Sequence

from abc_embed.commands import data, deps, evaluation, experiments, training
from abc_embed.core.config import settings
from abc_embed.core.errors import AbcError
from abc_embed.core.logging import configure_logging

logger = logging.getLogger("abc_embed")

EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with every command group registered."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--data", default=None, help=f"corpus directory (default {settings.DATA_DIR})")

    parser = argparse.ArgumentParser(
        prog="abc_embed",
        description="Instruction-controlled contrastive embedding pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    # Include command groups
    data.register(subparsers, common)
    training.register(subparsers, common)
    evaluation.register(subparsers, common)
    experiments.register(subparsers, common)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one command.

    Args:
        argv: Arguments without the program name

    Returns:
        0 on success, 2 on usage errors, 3 on invalid config, otherwise the
        failing stage's exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    configure_logging()
    logger.info("%s %s: %s (seed %s)", settings.PROJECT_NAME, deps.version_string(), args.command, args.seed)
    args.started = deps.now()
    try:
        args.handler(args)
    except AbcError as e:
        logger.error("%s", e)
        return e.exit_code
    return 0
