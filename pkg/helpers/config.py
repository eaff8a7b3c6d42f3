"""
Runtime settings loaded from a .env file and HESSFIT_* environment variables.
"""

import os
from dataclasses import dataclass
from typing import Optional

import dotenv
import pytz

from numerics.errors import ConfigError


LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


@dataclass(frozen=True)
class Settings:
    """Resolved runtime settings."""
    log_dir: str = 'logs'
    out_dir: str = 'results'
    timezone: str = 'UTC'
    log_level: str = 'INFO'
    workers: int = 1
    default_seed: int = 0


def _env_int(name: str, default: int, minimum: int = 0) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got '{raw}'")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def load_settings(env_file: Optional[str] = None) -> Settings:
    """Load settings from the environment, reading env_file (or ./.env) first."""
    if env_file:
        dotenv.load_dotenv(env_file)
    else:
        dotenv.load_dotenv()

    log_level = os.getenv('HESSFIT_LOG_LEVEL', 'INFO').upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"HESSFIT_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got '{log_level}'")

    timezone = os.getenv('HESSFIT_TIMEZONE', 'UTC')
    try:
        pytz.timezone(timezone)
    except pytz.UnknownTimeZoneError:
        raise ConfigError(f"HESSFIT_TIMEZONE is not a known timezone: '{timezone}'")

    return Settings(
        log_dir=os.getenv('HESSFIT_LOG_DIR', 'logs'),
        out_dir=os.getenv('HESSFIT_OUT_DIR', 'results'),
        timezone=timezone,
        log_level=log_level,
        workers=_env_int('HESSFIT_WORKERS', 1, minimum=1),
        default_seed=_env_int('HESSFIT_SEED', 0),
    )
