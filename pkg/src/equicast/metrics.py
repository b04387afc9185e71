"""Statistics over per-agent outcomes: spread, percentile gap, entropy, MSE.

All functions operate on the vector of per-agent mean regrets (or any
nonnegative per-agent score) and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    variance: float
    mean: float
    c95_minus_c5: float
    mse: float
    entropy: float

    def as_dict(self) -> dict:
        return {
            "variance": self.variance,
            "mean": self.mean,
            "c95_minus_c5": self.c95_minus_c5,
            "mse": self.mse,
            "entropy": self.entropy,
        }


def variance(values) -> float:
    """Population variance (divide by M, not M-1) of the per-agent scores."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("variance of an empty vector is undefined")
    return float(np.mean((v - v.mean()) ** 2))


def _percentile(sorted_values: np.ndarray, p: float) -> float:
    # linear interpolation at fractional rank (M-1)*p
    rank = (sorted_values.size - 1) * p
    lo = int(np.floor(rank))
    hi = int(np.ceil(rank))
    if lo == hi:
        return float(sorted_values[lo])
    frac = rank - lo
    return float(sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac)


def percentile_gap(values, lo: float = 0.05, hi: float = 0.95) -> float:
    """Difference between the hi and lo percentiles (linear interpolation)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile gap of an empty vector is undefined")
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"percentile bounds must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})")
    return _percentile(v, hi) - _percentile(v, lo)


def norm_entropy(values, exponent: float = 1.0) -> float:
    """Entropy of the scores raised to `exponent` and normalized to a distribution.

    Uses natural log and the 0*log(0) = 0 convention.  An all-zero vector maps
    to log(M): zero regret everywhere counts as perfectly uniform.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("entropy of an empty vector is undefined")
    if np.any(v < 0):
        raise ValueError("entropy requires nonnegative entries")
    if exponent <= 0:
        raise ValueError(f"exponent must be positive, got {exponent}")
    w = v**exponent
    total = w.sum()
    if total == 0.0:
        return float(np.log(v.size))
    p = w / total
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mse(preds, targets) -> float:
    """Sum over agents of the per-agent mean squared residual norm.

    `preds` and `targets` are per-agent sequences of arrays shaped (N_m,) or
    (N_m, O); the squared error of a sample is the squared euclidean norm of
    its residual vector.
    """
    if len(preds) != len(targets):
        raise ValueError(f"got {len(preds)} prediction groups vs {len(targets)} target groups")
    total = 0.0
    for p, t in zip(preds, targets):
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
        if p.shape[0] == 0:
            raise ValueError("empty agent group in mse")
        resid = (p - t).reshape(p.shape[0], -1)
        total += float(np.mean(np.sum(resid**2, axis=1)))
    return total


def report(per_agent_regrets, preds=None, targets=None, entropy_exponent: float = 1.0) -> MetricReport:
    """Bundle the standard statistics for a vector of per-agent mean regrets."""
    r = np.asarray(per_agent_regrets, dtype=float)
    return MetricReport(
        variance=variance(r),
        mean=float(r.mean()),
        c95_minus_c5=percentile_gap(r),
        mse=mse(preds, targets) if preds is not None else float("nan"),
        entropy=norm_entropy(r, entropy_exponent),
    )
