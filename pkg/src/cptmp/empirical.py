"""Cross-sectional empirical CDFs and probability-integral-transform checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DomainError


@dataclass(frozen=True)
class SampleSet:
    """A finite sample with its stable sorting permutation."""

    values: np.ndarray
    sorted_index: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, values) -> "SampleSet":
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise DataError("sample set must be non-empty")
        if np.any(np.isnan(v)):
            raise DataError("sample set contains NaN")
        v.setflags(write=False)
        idx = np.argsort(v, kind="stable")
        idx.setflags(write=False)
        return cls(v, idx)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def sorted_values(self) -> np.ndarray:
        return self.values[self.sorted_index]


def _as_samples(samples) -> SampleSet:
    return samples if isinstance(samples, SampleSet) else SampleSet.of(samples)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Right-continuous step CDF with midpoint ranks.

    ``F(x) = (k - 0.5) / n`` where ``k`` counts samples ``<= x``; tied
    samples therefore share the highest rank among them.  Below the sample
    minimum ``F`` is 0.
    """

    source: SampleSet
    rank_convention: str = "midpoint"

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        k = np.searchsorted(self.source.sorted_values, xa, side="right")
        out = np.where(k > 0, (k - 0.5) / self.source.n, 0.0)
        return float(out) if out.ndim == 0 else out

    def self_ranks(self) -> np.ndarray:
        """``F`` evaluated at each source sample, in original order."""
        return self(self.source.values)


def build_ecdf(samples) -> EmpiricalCDF:
    s = _as_samples(samples)
    if not np.all(np.isfinite(s.values)):
        raise DataError("samples must be finite")
    return EmpiricalCDF(s)


def pit_transform(cdf: EmpiricalCDF, samples) -> np.ndarray:
    return np.asarray(cdf(_as_samples(samples).values), dtype=float)


def midpoint_ranks(values: np.ndarray, axis: int | None = None) -> np.ndarray:
    """Midpoint-rank ECDF evaluated at the sample's own entries.

    With ``axis`` set, each slice along that axis is a separate sample.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DataError("sample set must be non-empty")
    if np.any(np.isnan(v)):
        raise DataError("sample set contains NaN")
    if axis is None:
        v = v.ravel()
        return (rankdata(v, method="max") - 0.5) / v.size
    return (rankdata(v, method="max", axis=axis) - 0.5) / v.shape[axis]


def ks_uniformity(values) -> float:
    """Kolmogorov-Smirnov distance between the sample and U(0, 1)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise DataError("ks_uniformity needs at least one value")
    if np.any(~((v >= 0.0) & (v <= 1.0))):
        raise DomainError("values must lie in [0, 1]")
    n = v.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - v), np.max(v - (i - 1) / n)))


def ks_threshold(n: int) -> float:
    """Acceptance threshold ``1.63/sqrt(n) + 1/n`` (asymptotic 1% level plus slack)."""
    return 1.63 / np.sqrt(n) + 1.0 / n
