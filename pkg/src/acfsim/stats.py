"""Small-sample summaries used by the stability report."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import InsufficientDataError, ZeroVarianceError


@dataclass(frozen=True)
class DeltaStats:
    mean: float
    stdev: float  # unbiased, n-1 denominator
    n: int


@dataclass(frozen=True)
class PairedTResult:
    t: float
    df: int
    p_two_sided: float


def delta_stats(values) -> DeltaStats:
    """Mean and unbiased stdev of a sequence (needs n >= 2)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise InsufficientDataError("delta_stats needs a 1-D sequence with n >= 2")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    return DeltaStats(float(v.mean()), float(v.std(ddof=1)), int(v.size))


def t_sf_two_sided(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via the regularized incomplete beta function."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 1.0
    return float(betainc(0.5 * df, 0.5, df / (df + t * t)))


def paired_t_test(x, y) -> PairedTResult:
    """Two-sided paired t-test on equal-length samples.

    Zero-variance differences with nonzero mean have an infinite t statistic
    and are reported as a distinct error; zero-variance zero-mean differences
    give t = 0, p = 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and equally long")
    if x.size < 2:
        raise InsufficientDataError("paired t-test needs n >= 2")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    d = x - y
    n = d.size
    df = n - 1
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            return PairedTResult(0.0, df, 1.0)
        raise ZeroVarianceError(
            f"paired differences are constant ({mean:g}); t is infinite"
        )
    t = mean / (sd / math.sqrt(n))
    return PairedTResult(float(t), df, t_sf_two_sided(t, df))


def format_delta_line(label: str, stats: DeltaStats) -> str:
    return f"{label}: mean = {stats.mean:.4f}  stdev = {stats.stdev:.4f}  n = {stats.n}"


def format_paired_line(label: str, result: PairedTResult) -> str:
    return (f"{label}: t = {result.t:.4f}  df = {result.df}  "
            f"p = {result.p_two_sided:.4f}")
