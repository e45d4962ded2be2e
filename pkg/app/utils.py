"""
Utility functions for diffphy: reproducible RNG streams and the sweep worker pool.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

from app.exceptions import DomainError
from app.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# SNR values enter spawn keys as integer milli-dB offset to stay non-negative
_SNR_OFFSET_DB = 1000.0


def snr_key(snr_db: float) -> int:
    """
    Raises:
        DomainError: If snr_db is not finite or below -1000 dB
    """
    if not math.isfinite(snr_db) or snr_db < -_SNR_OFFSET_DB:
        raise DomainError(f"SNR {snr_db} dB cannot key an RNG stream (finite and >= -1000 dB)")
    return int(round((snr_db + _SNR_OFFSET_DB) * 1000.0))


def derive_rng(seed: int, *coords: int) -> np.random.Generator:
    """
    Independent generator for one cell of an experiment grid.

    The stream depends only on the master seed and the cell coordinates,
    so results do not depend on execution order or worker count.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(c) for c in coords)))


def run_cells(func: Callable[[T], R], jobs: Sequence[T], workers: int = 1) -> List[R]:
    """
    Evaluate independent sweep cells, in a process pool when workers > 1.

    ``func`` must be a module-level function so it can be pickled. Results
    come back in job order.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]

    n_workers = min(workers, len(jobs))
    logger.info(f"Running {len(jobs)} cells on {n_workers} workers", extra={"workers": n_workers})
    with ProcessPoolExecutor(max_workers=n_workers) as executor:
        return list(executor.map(func, jobs))


def format_duration(seconds: float) -> str:
    """Format seconds into a short human-readable string."""
    if seconds < 60.0:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(seconds, 60.0)
    if minutes < 60.0:
        return f"{int(minutes)}m{int(secs):02d}s"
    hours, minutes = divmod(minutes, 60.0)
    return f"{int(hours)}h{int(minutes):02d}m"
