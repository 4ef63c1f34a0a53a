"""
Configuration file for the UCIP toolkit
Contains defaults, command descriptions, exit codes and environment settings
"""

import os
import logging
from datetime import timezone, timedelta

from dotenv import load_dotenv

load_dotenv()

# Toolkit Information
APP_NAME = "🧩 UCIP"
APP_VERSION = "0.1.0"
APP_DESCRIPTION = "Prompt-guided token mixing for super-resolving compressed images, at desk scale."

# Command Categories
DATA_COMMANDS = {
    "gen-data": "📦 Build a degraded LR/HR dataset and its manifest",
}

TRAINING_COMMANDS = {
    "train": "🏋️ Train a model from a TOML config",
    "finetune": "🎯 Prompt-tune a trained checkpoint on a new task",
}

ANALYSIS_COMMANDS = {
    "eval": "📊 PSNR/SSIM of a checkpoint or the bicubic baseline",
    "dump-offsets": "🔎 Histogram the offsets a checkpoint predicts for one image",
    "param-count": "🧮 Parameter breakdown of a model config",
}

COMMANDS = {**DATA_COMMANDS, **TRAINING_COMMANDS, **ANALYSIS_COMMANDS}

# Model defaults (toy scale)
MODEL_DEFAULTS = {
    "num_blocks": 2,
    "ptmms_per_block": 2,
    "channels": 16,
    "prompt_channels": 16,
    "num_prompts": 8,
    "scale": 4,
    "local_branch": True,
    "prompt_mode": "dynamic",
    "seed": 0,
}

# Training defaults
TRAIN_DEFAULTS = {
    "total_iters": 5000,
    "lr": 3e-4,
    "lr_halve_at": 0.5,
    "batch_size": 8,
    "patch_size": 64,
    "seed": 0,
    "tune_mode": "full",
    "eval_every": 500,
    "log_every": 50,
}

DATA_DEFAULTS = {
    "specs": ["dct_q:10", "dct_q:40", "blur_q:2"],
    "manifest": None,
    "eval_manifest": None,
}

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

# Files written into --out
EFFECTIVE_CONFIG_NAME = "effective_config.json"
RUN_LOG_NAME = "run.log"
EVAL_REPORT_NAME = "eval_report.json"
TRAIN_REPORT_NAME = "train_report.json"
PARAM_REPORT_NAME = "param_count.json"

# Emojis
EMOJIS = {
    "success": "✅",
    "error": "❌",
    "warning": "⚠️",
    "info": "ℹ️",
    "data": "📦",
    "train": "🏋️",
    "eval": "📊",
}


def _parse_utc_offset(text):
    """'+05:30' / '-03:00' / '0' → timezone"""
    text = (text or "+00:00").strip()
    sign = -1 if text.startswith("-") else 1
    hours, _, minutes = text.lstrip("+-").partition(":")
    try:
        delta = timedelta(hours=int(hours or 0), minutes=int(minutes or 0))
    except ValueError:
        logging.getLogger(__name__).warning(f"Ignoring malformed UCIP_LOG_UTC_OFFSET {text!r}")
        delta = timedelta(0)
    return timezone(sign * delta)


def _parse_threads(text):
    try:
        return max(1, int(text))
    except (TypeError, ValueError):
        return 1


# Environment settings
UCIP_THREADS = _parse_threads(os.getenv("UCIP_THREADS", "1"))
LOG_LEVEL = os.getenv("UCIP_LOG_LEVEL", "INFO").upper()
LOG_TIMEZONE = _parse_utc_offset(os.getenv("UCIP_LOG_UTC_OFFSET", "+00:00"))
