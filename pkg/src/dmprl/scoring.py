"""Scalar scores and curve statistics used by the logging and test harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EvalRecord:
    """Per-rollout outcome summary."""

    arpe: float
    larpe: float
    collided: bool
    final_error: float
    steps: int


def l_arpe(r: float) -> float:
    """Log-compressed episode return, ``-ln(1 - R)``.

    Defined for R <= 0 only (step rewards are negated non-negative costs);
    monotone increasing in R, with l_arpe(0) == 0.
    """
    if r > 0.0:
        raise ValueError(f"episode return must be non-positive, got {r}")
    return -math.log1p(-r)


def smooth_curve(series, window: int) -> list[float]:
    """Trailing moving average; partial head windows average what exists."""
    if window < 1:
        raise ValueError("window must be at least 1")
    values = [float(v) for v in series]
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        chunk = values[lo : i + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def aggregate_seeds(logs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-index mean and spread across equal-length runs.

    Returns (mean, var, std). ``var`` is the mean squared deviation (divides
    by the run count, no square root); ``std`` is its square root. Both are
    reported so downstream tables can name the spread unambiguously.
    """
    lengths = {len(log) for log in logs}
    if len(lengths) != 1:
        raise ValueError(f"logs must have equal lengths, got {sorted(lengths)}")
    arr = np.asarray(logs, dtype=float)
    mean = arr.mean(axis=0)
    var = np.mean((arr - mean) ** 2, axis=0)
    return mean, var, np.sqrt(var)
