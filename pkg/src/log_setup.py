"""
Logging configuration for command-line runs.
"""

import logging
import os
from typing import Optional

from pythonjsonlogger import jsonlogger

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Configure the root logger once, plain text or JSON"""
    level = (level or os.getenv("BALLBEAM_LOG_LEVEL", "INFO")).upper()
    fmt = (fmt or os.getenv("BALLBEAM_LOG_FORMAT", "text")).lower()

    if fmt == "json":
        handler = logging.StreamHandler()
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
        root = logging.getLogger()
        root.handlers[:] = [handler]
        root.setLevel(level)
    else:
        logging.basicConfig(level=level, format=LOG_FORMAT, force=True)

    # matplotlib is chatty at INFO about font discovery
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
