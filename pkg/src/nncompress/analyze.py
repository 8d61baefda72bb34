"""Weight statistics: Laplacian fits, per-layer moments and empirical entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistributionError
from .model import Network, Role, Tensor


@dataclass(frozen=True)
class LaplacianFit:
    mu: float
    b: float

    def __post_init__(self):
        if not np.isfinite(self.mu) or not self.b > 0:
            raise ValueError(f"invalid Laplacian parameters mu={self.mu}, b={self.b}")

    @property
    def variance(self) -> float:
        return 2.0 * self.b ** 2


def _values(t) -> np.ndarray:
    if isinstance(t, Tensor):
        if t.data is None:
            raise ValueError("tensor has no payload")
        t = t.data
    return np.asarray(t, dtype=np.float64).ravel()


def fit_laplacian(t) -> LaplacianFit:
    """Maximum-likelihood Laplace fit: location is the median, scale the mean absolute deviation."""
    x = _values(t)
    if x.size < 2 or np.all(x == x[0]):
        raise DegenerateDistributionError("cannot fit a Laplacian to constant data")
    mu = float(np.median(x))
    b = float(np.mean(np.abs(x - mu)))
    return LaplacianFit(mu, b)


@dataclass(frozen=True)
class LayerStats:
    name: str
    count: int
    mean: float
    variance: float
    b: float
    mu: float
    kurtosis: float  # excess


def layer_stats(net: Network) -> list[LayerStats]:
    out = []
    for layer in net.conv_layers():
        w = layer.tensors[Role.CONV_WEIGHT]
        if not w.has_payload:
            continue
        x = _values(w)
        mean = float(x.mean())
        var = float(x.var())
        fit = fit_laplacian(x)
        kurt = float(np.mean((x - mean) ** 4) / var ** 2 - 3.0)
        out.append(LayerStats(layer.name, x.size, mean, var, fit.b, fit.mu, kurt))
    if not out:
        raise ValueError("network has no conv layer with a payload")
    return out


@dataclass
class Histogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).ravel()
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be nonnegative")

    @classmethod
    def of(cls, indices, k: int) -> "Histogram":
        return cls(np.bincount(np.asarray(indices, dtype=np.int64).ravel(), minlength=k))

    @property
    def symbol_count(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def empirical_entropy(h: Histogram) -> float:
    """Shannon entropy in bits per symbol."""
    if h.total <= 0:
        raise ValueError("entropy of an empty histogram")
    p = h.counts[h.counts > 0] / h.total
    return float(max(0.0, -np.sum(p * np.log2(p))))
