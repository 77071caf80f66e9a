from __future__ import annotations

import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stderr handler on the root logger.

    The level falls back to BMFO_LOG_LEVEL, then INFO. Calling this again
    updates the level and re-targets the handler at the current stderr.
    """
    level_name = (level or os.environ.get("BMFO_LOG_LEVEL", "INFO")).upper()
    root = logging.getLogger()
    root.setLevel(getattr(logging, level_name, logging.INFO))
    for existing in root.handlers:
        if getattr(existing, "_bmfo_handler", False):
            existing.setStream(sys.stderr)
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._bmfo_handler = True
    root.addHandler(handler)
