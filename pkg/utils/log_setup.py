"""
Logging setup for the UCIP command line
One formatter with a configurable timezone, a console handler and a
per-run log file inside the --out directory
"""

import logging
from datetime import datetime
from pathlib import Path

from config import LOG_LEVEL, LOG_TIMEZONE, RUN_LOG_NAME


class RunFormatter(logging.Formatter):
    """Timestamps in the zone given by UCIP_LOG_UTC_OFFSET"""

    def __init__(self, fmt=None, datefmt=None, tz=None):
        super().__init__(fmt, datefmt)
        self.tz = tz or LOG_TIMEZONE

    def formatTime(self, record, datefmt=None):
        dt = datetime.fromtimestamp(record.created, tz=self.tz)
        if datefmt:
            return dt.strftime(datefmt)
        return dt.strftime("%Y-%m-%d %H:%M:%S %z")


def make_formatter():
    return RunFormatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def configure_logging(level=None):
    """Configure the root logger with a console handler (idempotent)"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_ucip_console", False):
            root.removeHandler(handler)
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(make_formatter())
    console_handler._ucip_console = True
    root.addHandler(console_handler)
    root.setLevel(getattr(logging, (level or LOG_LEVEL), logging.INFO))
    return root


def attach_file_log(out_dir):
    """Mirror the log into <out>/run.log; returns the handler so callers can detach it"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(out_dir / RUN_LOG_NAME)
    file_handler.setFormatter(make_formatter())
    logging.getLogger().addHandler(file_handler)
    return file_handler


def detach_file_log(handler):
    if handler is not None:
        logging.getLogger().removeHandler(handler)
        handler.close()
