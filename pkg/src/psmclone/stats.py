"""Two-sample KS test, the likelihood-ratio decision rule and confusion metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySample

# Below this, the Kolmogorov survival function equals 1 to double precision
# and the alternating series has not yet started to converge.
_KOLMOGOROV_FLAT = 0.18


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    reject: bool


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """sup_x |F_a(x) - F_b(x)| evaluated at every pooled sample point."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def kolmogorov_sf(x: float, tol: float = 1e-10, max_terms: int = 1000) -> float:
    """Asymptotic P(K > x) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)."""
    if x < _KOLMOGOROV_FLAT:
        return 1.0
    total = 0.0
    for k in range(1, max_terms + 1):
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 == 1 else -term
        if term < tol:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def ks_two_sample(a: Sequence[float], b: Sequence[float], alpha: float) -> KSResult:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    d = ks_statistic(a, b)
    n_a, n_b = len(a), len(b)
    n_eff = n_a * n_b / (n_a + n_b)
    p = kolmogorov_sf(math.sqrt(n_eff) * d)
    return KSResult(statistic=d, p_value=p, reject=p < alpha)


def glrt_decision(lam: float, c: float) -> bool:
    """True when equivalence is retained, i.e. ``lam >= log(c)``."""
    if not 0.0 < c < 1.0:
        raise ValueError(f"critical value c must lie in (0, 1), got {c}")
    return lam >= math.log(c)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def metrics(c: ConfusionCounts) -> dict[str, float]:
    return {"precision": precision(c), "recall": recall(c), "f1": f1(c), "mcc": mcc(c)}
