"""
Helper modules for hessfit: settings, logging, seeded randomness and retries.
"""

from .config import Settings, load_settings
from .logger import BenchLogger, setup_logging
from .rng import SeededRng, as_rng
from .retry import io_retry

__all__ = ['Settings', 'load_settings', 'BenchLogger', 'setup_logging', 'SeededRng', 'as_rng', 'io_retry']
