"""Paired nonparametric statistics for per-utterance metric comparisons.

Implements the Wilcoxon signed-rank test with the two zero-difference
policies that matter when most pairs tie exactly (common for word error
rates on read speech): dropping zeros before ranking, or ranking zeros
first and then discarding their ranks (the Pratt method). Small samples
get an exact sign-flip enumeration; larger ones use the tie-corrected
normal approximation with continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError

METHOD_DROP_ZEROS = "wilcox_drop_zeros"
METHOD_PRATT = "pratt"

EXACT_LIMIT = 12  # sign-flip enumeration up to 2^12 assignments


@dataclass(frozen=True)
class PairedStats:
    n: int  # total pairs
    n_zero_diffs: int
    statistic: float  # W = min(W+, W-)
    p_value: float
    method: str
    exact: bool


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p over all 2^m sign assignments of the rank vector."""
    m = len(ranks)
    bits = (np.arange(1 << m)[:, None] >> np.arange(m)[None, :]) & 1
    dist = bits @ ranks
    eps = 1e-9
    p_low = np.mean(dist <= w_plus + eps)
    p_high = np.mean(dist >= w_plus - eps)
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def _approx_two_sided_p(w_plus: float, n: int, n_zero: int, nonzero_ranks: np.ndarray) -> float:
    """Normal approximation with tie and continuity corrections."""
    mean = (n * (n + 1) - n_zero * (n_zero + 1)) / 4.0
    var = (n * (n + 1) * (2 * n + 1) - n_zero * (n_zero + 1) * (2 * n_zero + 1)) / 24.0
    _, counts = np.unique(nonzero_ranks, return_counts=True)
    var -= (counts**3 - counts).sum() / 48.0
    if var <= 0:
        return 1.0
    d = w_plus - mean
    correction = 0.5 * np.sign(d)
    z = (d - correction) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(x, y, method: str = METHOD_DROP_ZEROS, exact=None) -> PairedStats:
    """Two-sided Wilcoxon signed-rank test on paired samples x, y.

    method selects the zero-difference policy; exact=None picks exact
    enumeration automatically when the nonzero count is at most 12,
    True/False forces it.
    """
    if method not in (METHOD_DROP_ZEROS, METHOD_PRATT):
        raise ValidationError(f"unknown method {method!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"x and y must be equal-length 1-D sequences, got {x.shape} vs {y.shape}")
    n = len(x)
    if n < 5:
        raise ValidationError(f"need at least 5 pairs, got {n}")
    d = x - y
    zero_mask = d == 0.0
    n_zero = int(zero_mask.sum())
    m = n - n_zero

    if method == METHOD_DROP_ZEROS:
        if m == 0:
            raise ValidationError("no nonzero pairs")
        dn = d[~zero_mask]
        ranks = rankdata(np.abs(dn))
        n_eff, z_eff = m, 0
    else:
        if m == 0:
            return PairedStats(n, n_zero, 0.0, 1.0, method, True)
        all_ranks = rankdata(np.abs(d))
        dn = d[~zero_mask]
        ranks = all_ranks[~zero_mask]
        n_eff, z_eff = n, n_zero

    w_plus = float(ranks[dn > 0].sum())
    w_minus = float(ranks[dn < 0].sum())
    statistic = min(w_plus, w_minus)

    use_exact = exact if exact is not None else (m <= EXACT_LIMIT)
    if use_exact and m > 20:
        raise ValidationError(f"exact enumeration limited to 20 nonzero pairs, got {m}")
    if use_exact:
        p = _exact_two_sided_p(np.asarray(ranks, dtype=np.float64), w_plus)
    else:
        p = _approx_two_sided_p(w_plus, n_eff, z_eff, np.asarray(ranks))
    return PairedStats(n, n_zero, statistic, p, method, bool(use_exact))


def stats_to_json(stats: PairedStats) -> dict:
    return {
        "n": stats.n,
        "n_zero_diffs": stats.n_zero_diffs,
        "statistic": stats.statistic,
        "p_value": stats.p_value,
        "method": stats.method,
        "exact": stats.exact,
        "sidedness": "two-sided",
    }
