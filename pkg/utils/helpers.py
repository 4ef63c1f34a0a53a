"""
Helper functions for the UCIP command line
Provides formatting, override parsing and file fingerprinting
"""

import hashlib
import json
import logging
import math
from pathlib import Path

from ucip.errors import ConfigError

logger = logging.getLogger(__name__)


def format_duration(seconds: float) -> str:
    """
    Format duration in seconds to human readable string
    """
    if seconds < 60:
        return f"{seconds:.1f} s"
    if seconds < 3600:
        return f"{int(seconds // 60)} min {int(seconds % 60)} s"
    return f"{int(seconds // 3600)} h {int(seconds % 3600 // 60)} min"


def format_file_size(size_bytes: int) -> str:
    """
    Format file size in bytes to human readable string
    """
    if size_bytes == 0:
        return "0 B"
    size_names = ["B", "KB", "MB", "GB", "TB"]
    i = min(int(math.floor(math.log(size_bytes, 1024))), len(size_names) - 1)
    s = round(size_bytes / math.pow(1024, i), 2)
    return f"{s} {size_names[i]}"


def parse_scalar(text: str):
    """Interpret an override value: bool, int, float, comma list or string"""
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if "," in text:
        return [part.strip() for part in text.split(",") if part.strip()]
    return text.strip()


def parse_override(text: str):
    """
    'section.key=value' → (section, key, value)
    """
    target, sep, value = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(text, "override must look like section.key=value")
    return section, key, parse_scalar(value)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    logger.debug(f"Wrote {path} ({format_file_size(path.stat().st_size)})")
    return path
