"""
Benchmark logging with timezone-aware timestamps.
"""

import os
import logging
from datetime import datetime
from typing import Optional

import pytz

from .config import Settings, load_settings


LOG_FORMAT = "%(asctime)s.%(msecs)03d - %(levelname)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"
ACTIVITY_LOG = "hessfit_activity.log"


class TimeZoneFormatter(logging.Formatter):
    """Formatter rendering record times in a fixed pytz timezone."""

    def __init__(self, fmt=None, datefmt=None, tz=None):
        super().__init__(fmt=fmt, datefmt=datefmt)
        self.tz = tz or pytz.UTC

    def formatTime(self, record, datefmt=None):
        dt = datetime.fromtimestamp(record.created, tz=self.tz)
        if datefmt:
            return dt.strftime(datefmt)
        return dt.isoformat()


def _make_formatter(settings: Settings) -> TimeZoneFormatter:
    return TimeZoneFormatter(LOG_FORMAT, datefmt=LOG_DATEFMT, tz=pytz.timezone(settings.timezone))


def setup_logging(settings: Optional[Settings] = None, log_to_console: bool = True) -> logging.Logger:
    """Attach file and console handlers to the root logger once."""
    settings = settings or load_settings()
    root = logging.getLogger()
    root.setLevel(logging.DEBUG)

    # Prevent duplicate handlers
    if any(getattr(h, '_hessfit', False) for h in root.handlers):
        return root

    os.makedirs(settings.log_dir, exist_ok=True)
    formatter = _make_formatter(settings)

    file_handler = logging.FileHandler(os.path.join(settings.log_dir, ACTIVITY_LOG))
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)
    file_handler._hessfit = True
    root.addHandler(file_handler)

    if log_to_console:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(getattr(logging, settings.log_level))
        console_handler.setFormatter(formatter)
        console_handler._hessfit = True
        root.addHandler(console_handler)

    # Disable verbose logging from external libraries
    for name in ('matplotlib', 'numba', 'urllib3', 'asyncio'):
        logging.getLogger(name).setLevel(logging.WARNING)

    return root


class BenchLogger:
    """Per-run logger whose messages carry a [SCENARIO_METHOD] prefix."""

    def __init__(self, scenario: str, method: str, seed: Optional[int] = None):
        self.scenario = scenario
        self.method = method
        self.seed = seed
        self.logger = logging.getLogger(f"hessfit.bench.{scenario}.{method}")

    @property
    def prefix(self) -> str:
        tag = f"{self.scenario.upper()}_{self.method.upper()}"
        if self.seed is not None:
            tag = f"{tag}#{self.seed}"
        return f"[{tag}]"

    def log(self, message: str, level: str = "INFO"):
        """Log a message with the specified level."""
        formatted_message = f"{self.prefix} {message}"
        level = level.upper()
        if level == "DEBUG":
            self.logger.debug(formatted_message)
        elif level == "WARNING":
            self.logger.warning(formatted_message)
        elif level == "ERROR":
            self.logger.error(formatted_message)
        else:
            self.logger.info(formatted_message)
