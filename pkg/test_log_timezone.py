#!/usr/bin/env python3
"""
Test script to verify log timestamps, per-run log files and the small
formatting helpers used by the command handlers
"""

import logging
import os
import sys
import tempfile
from datetime import timedelta, timezone
from pathlib import Path

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import _parse_threads, _parse_utc_offset
from utils.helpers import format_duration, format_file_size, parse_override, parse_scalar
from utils.log_setup import RunFormatter, attach_file_log, configure_logging, detach_file_log

logger = logging.getLogger(__name__)


def test_utc_offset_parsing():
    assert _parse_utc_offset("+05:30").utcoffset(None) == timedelta(hours=5, minutes=30)
    assert _parse_utc_offset("-03:00").utcoffset(None) == timedelta(hours=-3)
    assert _parse_utc_offset("0").utcoffset(None) == timedelta(0)
    assert _parse_utc_offset("soon").utcoffset(None) == timedelta(0)


def test_formatter_uses_configured_zone():
    record = logging.LogRecord("ucip", logging.INFO, __file__, 1, "hello", None, None)
    record.created = 0.0
    ist = RunFormatter("%(asctime)s %(message)s", tz=timezone(timedelta(hours=5, minutes=30)))
    assert ist.format(record) == "1970-01-01 05:30:00 +0530 hello"
    utc = RunFormatter("%(asctime)s", datefmt="%H:%M", tz=timezone.utc)
    assert utc.format(record) == "00:00"


def test_configure_logging_is_idempotent():
    root = configure_logging("DEBUG")
    configure_logging("WARNING")
    consoles = [h for h in root.handlers if getattr(h, "_ucip_console", False)]
    assert len(consoles) == 1
    assert root.level == logging.WARNING
    configure_logging()


def test_run_log_is_attached_and_detached():
    configure_logging("INFO")
    with tempfile.TemporaryDirectory() as tmp:
        handler = attach_file_log(Path(tmp) / "run")
        logging.getLogger("ucip.test").info("mirrored line")
        detach_file_log(handler)
        logging.getLogger("ucip.test").info("not mirrored")
        text = (Path(tmp) / "run" / "run.log").read_text()
        assert "mirrored line" in text
        assert "not mirrored" not in text
        assert handler not in logging.getLogger().handlers


def test_thread_count_parsing():
    assert _parse_threads("4") == 4
    assert _parse_threads("0") == 1
    assert _parse_threads("many") == 1


def test_formatting_helpers():
    assert format_duration(12.34) == "12.3 s"
    assert format_duration(125) == "2 min 5 s"
    assert format_duration(7322) == "2 h 2 min"
    assert format_file_size(0) == "0 B"
    assert format_file_size(2048) == "2.0 KB"


def test_override_values():
    assert parse_override("train.lr=0.001") == ("train", "lr", 0.001)
    assert parse_override("model.local_branch=false") == ("model", "local_branch", False)
    assert parse_override("data.specs=dct_q:10,blur_q:2") == ("data", "specs", ["dct_q:10", "blur_q:2"])
    assert parse_scalar("64") == 64
    assert parse_scalar("dynamic") == "dynamic"


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            logger.info(f"✅ {name}")
        except Exception as e:
            failed += 1
            logger.error(f"❌ {name} - {e!r}")
    logger.info(f"🎯 {len(tests) - failed}/{len(tests)} passed")
    sys.exit(1 if failed else 0)
