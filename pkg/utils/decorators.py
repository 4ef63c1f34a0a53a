"""
Decorators for the UCIP command handlers
Provides usage logging, per-run log files and exit-code mapping
"""

import logging
import time
from functools import wraps

from config import EMOJIS, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION
from ucip.errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    DegradationError,
    NumericOverflowError,
    OptimizerError,
    ShapeMismatchError,
    TrainingAbort,
    UcipError,
)
from utils.helpers import format_duration
from utils.log_setup import attach_file_log, detach_file_log

logger = logging.getLogger(__name__)

VALIDATION_ERRORS = (
    ConfigError, DatasetError, DegradationError, CheckpointError, ShapeMismatchError, FileNotFoundError,
)
RUNTIME_ERRORS = (TrainingAbort, NumericOverflowError, OptimizerError)


def exit_on_error(func):
    """Decorator mapping library errors onto process exit codes"""
    @wraps(func)
    def wrapper(args, *extra, **kwargs):
        try:
            func(args, *extra, **kwargs)
            return EXIT_OK
        except VALIDATION_ERRORS as e:
            logger.error(f"{EMOJIS['error']} {e}")
            return EXIT_VALIDATION
        except RUNTIME_ERRORS as e:
            logger.error(f"{EMOJIS['error']} Run aborted: {e}")
            return EXIT_RUNTIME
        except UcipError as e:
            logger.error(f"{EMOJIS['error']} {type(e).__name__}: {e}")
            return EXIT_RUNTIME

    return wrapper


def log_command_usage(func):
    """Decorator to log command usage, mirroring the log into <out>/run.log when there is an --out"""
    @wraps(func)
    def wrapper(args, *extra, **kwargs):
        command_name = getattr(args, "command", func.__name__)
        out_dir = getattr(args, "out", None)
        handler = attach_file_log(out_dir) if out_dir else None
        options = {k: v for k, v in vars(args).items() if k not in ("handler", "command")}
        logger.info(f"Command '{command_name}' started with {options}")
        started = time.perf_counter()
        try:
            code = func(args, *extra, **kwargs)
            elapsed = time.perf_counter() - started
            status = EMOJIS["success"] if code == EXIT_OK else EMOJIS["error"]
            logger.info(f"{status} Command '{command_name}' finished with exit code {code} in {format_duration(elapsed)}")
            return code
        finally:
            detach_file_log(handler)

    return wrapper
