"""Multi-run statistics."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def mean_ci(values, level: float = 0.90) -> tuple[float, float]:
    """Mean and two-sided Student-t confidence half-width.

    A single value has no spread estimate; its half-width is reported as 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise ValueError("no values")
    m = float(v.mean())
    if len(v) < 2:
        return m, 0.0
    q = stats.t.ppf(0.5 + level / 2, len(v) - 1)
    return m, float(q * v.std(ddof=1) / math.sqrt(len(v)))


def format_ci(mean: float, half: float) -> str:
    return f"{mean:.6g}±{half:.6g}"
