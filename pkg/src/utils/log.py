"""
Logging Setup
Configures the root logger from config/macmd_config.py
"""

import logging
import sys

from pythonjsonlogger.json import JsonFormatter

from config.macmd_config import LOG_FORMAT, LOG_LEVEL


def setup_logging(level: str = LOG_LEVEL, json_format: bool = False) -> None:
    """
    Install a single stderr handler on the root logger

    Args:
        level: Logging level name (e.g. 'INFO')
        json_format: Emit one JSON object per record instead of plain text
    """
    handler = logging.StreamHandler(sys.stderr)
    if json_format:
        handler.setFormatter(JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())
