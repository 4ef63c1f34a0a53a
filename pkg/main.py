#!/usr/bin/env python3
"""
UCIP command line
Dataset generation, training, prompt-tuning, evaluation, offset analysis
and parameter accounting behind one subcommand-style entry point
"""

import argparse
import logging
import sys

from config import APP_DESCRIPTION, APP_NAME, APP_VERSION, COMMANDS, EXIT_VALIDATION
from handlers.data import add_gen_data_arguments, gen_data_command
from handlers.evaluation import (
    add_dump_offsets_arguments,
    add_eval_arguments,
    add_param_count_arguments,
    dump_offsets_command,
    eval_command,
    param_count_command,
)
from handlers.training import add_finetune_arguments, add_train_arguments, finetune_command, train_command
from utils.log_setup import configure_logging

logger = logging.getLogger(__name__)


def add_command(subparsers, name, add_arguments, handler):
    parser = subparsers.add_parser(
        name, help=COMMANDS[name], description=COMMANDS[name],
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    add_arguments(parser)
    parser.set_defaults(handler=handler)
    return parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ucip", description=f"{APP_NAME} {APP_VERSION}: {APP_DESCRIPTION}",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"ucip {APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="override UCIP_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    # Data commands
    add_command(subparsers, "gen-data", add_gen_data_arguments, gen_data_command)

    # Training commands
    add_command(subparsers, "train", add_train_arguments, train_command)
    add_command(subparsers, "finetune", add_finetune_arguments, finetune_command)

    # Analysis commands
    add_command(subparsers, "eval", add_eval_arguments, eval_command)
    add_command(subparsers, "dump-offsets", add_dump_offsets_arguments, dump_offsets_command)
    add_command(subparsers, "param-count", add_param_count_arguments, param_count_command)

    return parser


def main(argv=None):
    """Parse arguments, run one command and return its exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level.upper() if args.log_level else None)
    if not getattr(args, "handler", None):
        parser.print_help()
        return EXIT_VALIDATION
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
