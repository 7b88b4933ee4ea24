"""Descriptive statistics and the paired comparison test for results."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class StatsSummary:
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float
    count: int
    degenerate: bool = False  # single observation: std reported as 0

    def __post_init__(self):
        if not (self.min <= self.q25 <= self.median <= self.q75 <= self.max):
            raise ValueError("quartiles out of order")


def descriptive_stats(values: Sequence[float]) -> StatsSummary:
    """Sample std (n−1) and linear-interpolation quartiles."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("descriptive_stats requires at least one value")
    degenerate = arr.size == 1
    std = 0.0 if degenerate else float(np.std(arr, ddof=1))
    q25, median, q75 = (float(q) for q in np.quantile(arr, [0.25, 0.5, 0.75], method="linear"))
    return StatsSummary(
        mean=float(np.mean(arr)),
        std=std,
        min=float(np.min(arr)),
        q25=q25,
        median=median,
        q75=q75,
        max=float(np.max(arr)),
        count=int(arr.size),
        degenerate=degenerate,
    )


def paired_one_sided_pvalue(treatment: Sequence[float], control: Sequence[float]) -> float:
    """P-value for mean(treatment) > mean(control), paired observations."""
    a = np.asarray(list(treatment), dtype=np.float64)
    b = np.asarray(list(control), dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("paired test needs two equal-length samples of size >= 2")
    result = sps.ttest_rel(a, b, alternative="greater")
    return float(result.pvalue)
