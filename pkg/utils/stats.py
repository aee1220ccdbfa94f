"""
utils/stats.py
--------------
Small statistics helpers used by the evaluation harness.
"""

from typing import Sequence

import numpy as np
from scipy import stats


def standard_error(values: Sequence[float]) -> float:
    """Sample standard error (ddof=1); 0.0 when fewer than two values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    return float(stats.sem(arr, ddof=1))


def intervals_overlap(mean_a: float, se_a: float, mean_b: float, se_b: float) -> bool:
    """True when the ±1 stderr intervals of two estimates intersect."""
    return (mean_a - se_a) <= (mean_b + se_b) and (mean_b - se_b) <= (mean_a + se_a)
