"""Shared fixtures for the hessfit test suite."""
import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import the packages
sys.path.insert(0, str(Path(__file__).parent.parent))

from helpers.rng import SeededRng
from numerics.matkit import hilbert


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def spd_matrix(rng):
    """Well-conditioned 5x5 SPD matrix."""
    A = rng.standard_normal((5, 5))
    M = A @ A.T / 5.0 + 0.5 * np.eye(5)
    return 0.5 * (M + M.T)


@pytest.fixture
def hilbert3():
    return hilbert(3)


@pytest.fixture
def clean_logging():
    """Detach the handlers setup_logging installs on the root logger."""
    root = logging.getLogger()
    level = root.level
    yield
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, '_hessfit', False):
            root.removeHandler(handler)
            handler.close()


@pytest.fixture
def hessfit_env(tmp_path, monkeypatch):
    """Point every HESSFIT_* directory at tmp_path."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('HESSFIT_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.setenv('HESSFIT_OUT_DIR', str(tmp_path / 'results'))
    for name in ('HESSFIT_LOG_LEVEL', 'HESSFIT_TIMEZONE', 'HESSFIT_WORKERS', 'HESSFIT_SEED'):
        monkeypatch.delenv(name, raising=False)
    return tmp_path
