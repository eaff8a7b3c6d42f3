"""Data logging module for convergence curves and run summaries."""
import csv
import json
import logging
import math
import os
from datetime import datetime
from typing import Iterable, Optional

import pytz

from helpers.retry import io_retry
from .runner import RunResult
from .stats import fit_loglog_slope, min_metric

CSV_HEADER = ['scenario', 'method', 'seed', 'iter', 'metric', 'wall_ns']


def format_metric(value: float) -> str:
    return '%.17g' % value


def _json_float(value) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


class CurveLogger:
    """Writes curve points to one CSV file and run summaries to a JSON file next to it."""

    def __init__(self, csv_path: str, logger: Optional[logging.Logger] = None, timezone: str = 'UTC'):
        """Initialize the logger; the CSV is truncated so reruns produce identical bytes."""
        self.csv_path = csv_path
        self.summary_path = os.path.splitext(csv_path)[0] + '_summary.json'
        self.logger = logger or logging.getLogger(__name__)
        self.tz = pytz.timezone(timezone)
        self.rows_written = 0
        self.summaries = []

        # CSV file handle for efficient writing (kept open)
        self.csv_file = None
        self.csv_writer = None
        self.write_counter = 0
        self.flush_interval = 10  # Flush every N curves

        self._initialize_csv_file()

    @io_retry()
    def _initialize_csv_file(self):
        """Create the CSV file and write the header."""
        directory = os.path.dirname(self.csv_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.csv_file = open(self.csv_path, 'w', newline='', encoding='utf-8', buffering=8192)  # 8KB buffer
        self.csv_writer = csv.writer(self.csv_file, lineterminator='\n')
        self.csv_writer.writerow(CSV_HEADER)
        self.csv_file.flush()

    def log_curve(self, result: RunResult):
        """Append every point of one run."""
        if not self.csv_file or not self.csv_writer:
            raise RuntimeError(f"CSV file {self.csv_path} is closed")
        cfg = result.config
        for point in result.points:
            self.csv_writer.writerow([cfg.scenario, cfg.method, cfg.seed, point.iter,
                                      format_metric(point.metric), point.wall_ns])
        self.rows_written += len(result.points)
        self.summaries.append(summarize(result))

        self.write_counter += 1
        if self.write_counter >= self.flush_interval:
            self.csv_file.flush()
            self.write_counter = 0

        status = '⚠️ diverged' if result.diverged else '📊 logged'
        self.logger.info(f"{status}: {cfg.scenario}/{cfg.method} seed={cfg.seed} "
                         f"{len(result.points)} points, final metric {result.final_metric:.3e}")

    @io_retry()
    def write_summary(self) -> str:
        """Write the JSON summary of every run logged so far."""
        payload = {
            'generated_at': datetime.now(self.tz).isoformat(),
            'csv': os.path.basename(self.csv_path),
            'runs': self.summaries,
        }
        with open(self.summary_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2)
        self.logger.info(f"📊 Summary written to {self.summary_path}")
        return self.summary_path

    def close(self):
        """Flush and close the CSV file."""
        if self.csv_file:
            try:
                self.csv_file.flush()
                self.csv_file.close()
            except Exception as e:
                self.logger.error(f"Error closing CSV file: {e}")
            finally:
                self.csv_file = None
                self.csv_writer = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False


def summarize(result: RunResult) -> dict:
    """Final and best metric, divergence flag and log-log slope over the last decade of iterations."""
    cfg = result.config
    iters = cfg.iters or (result.points[-1].iter if result.points else 0)
    slope = None
    if iters >= 100:
        try:
            slope = fit_loglog_slope(result.points, (max(1, iters // 10), iters))
        except ValueError:
            slope = None
    notes = {key: (_json_float(value) if isinstance(value, float) else value)
             for key, value in result.notes.items()}
    return {
        'scenario': cfg.scenario,
        'method': cfg.method,
        'seed': cfg.seed,
        'iters': iters,
        'points': len(result.points),
        'final_metric': _json_float(result.final_metric),
        'min_metric': _json_float(min_metric(result.points)),
        'diverged': result.diverged,
        'loglog_slope': slope,
        'notes': notes,
    }


def write_csv(path: str, results: Iterable[RunResult], logger: Optional[logging.Logger] = None,
              timezone: str = 'UTC', summary: bool = True) -> str:
    """Write a batch of results to one CSV (plus summary) and return the CSV path."""
    with CurveLogger(path, logger=logger, timezone=timezone) as curve_logger:
        for result in results:
            curve_logger.log_curve(result)
        if summary:
            curve_logger.write_summary()
    return path
