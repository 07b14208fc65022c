"""Precision/accuracy statistics and empirical CDFs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Point2

LOW_SAMPLE_COUNT = 10


@dataclass(frozen=True)
class Cep:
    radius: float
    fraction: float
    center: Point2
    n_samples: int


@dataclass(frozen=True)
class CdfSeries:
    values: np.ndarray
    fractions: np.ndarray

    def quantile(self, q: float) -> float:
        """Smallest value whose cumulative fraction reaches ``q``."""
        k = int(np.searchsorted(self.fractions, q - 1e-12))
        return float(self.values[min(k, len(self.values) - 1)])


def _xy(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 2).astype(float)
    return np.array([[p.x, p.y] if isinstance(p, Point2) else list(p) for p in points],
                    dtype=float).reshape(-1, 2)


def order_statistic(values: np.ndarray, fraction: float) -> float:
    """The ceil(fraction * n)-th smallest value, no interpolation."""
    n = len(values)
    k = max(1, math.ceil(fraction * n - 1e-9))
    return float(np.partition(values, k - 1)[k - 1])


def cep(estimates, fraction: float = 0.68, center: Point2 | None = None) -> Cep:
    """Radius around ``center`` (default: the centroid) holding ``fraction`` of the estimates."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    xy = _xy(estimates)
    n = len(xy)
    if n == 0:
        raise ValueError("no estimates")
    if n < LOW_SAMPLE_COUNT:
        warnings.warn(f"CEP from only {n} samples", RuntimeWarning, stacklevel=2)
    c = xy.mean(axis=0) if center is None else center.as_array()
    d = np.sqrt(((xy - c) ** 2).sum(axis=1))
    return Cep(order_statistic(d, fraction), fraction, Point2(float(c[0]), float(c[1])), n)


def positioning_errors(estimates, truth: Point2) -> np.ndarray:
    xy = _xy(estimates)
    return np.sqrt(((xy - truth.as_array()) ** 2).sum(axis=1))


def accuracy(estimates, truth: Point2) -> float:
    """Mean distance from the estimates to the true position."""
    errors = positioning_errors(estimates, truth)
    if len(errors) == 0:
        raise ValueError("no estimates")
    return float(errors.mean())


def cdf(values: Sequence[float]) -> CdfSeries:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise ValueError("no values")
    return CdfSeries(v, np.arange(1, len(v) + 1) / len(v))


@dataclass(frozen=True)
class Comparison:
    cdf_tdoa: CdfSeries
    cdf_coop: CdfSeries
    median_tdoa: float
    median_coop: float
    max_tdoa: float
    max_coop: float
    frac_tdoa_above_coop_max: float

    def to_json(self) -> dict:
        return {
            "median_tdoa": self.median_tdoa,
            "median_coop": self.median_coop,
            "max_tdoa": self.max_tdoa,
            "max_coop": self.max_coop,
            "frac_tdoa_above_coop_max": self.frac_tdoa_above_coop_max,
            "n": int(len(self.cdf_tdoa.values)),
        }


def compare_algorithms(cep_tdoa: Sequence[float], cep_coop: Sequence[float]) -> Comparison:
    a = np.asarray(cep_tdoa, dtype=float)
    b = np.asarray(cep_coop, dtype=float)
    if len(a) != len(b):
        raise ValueError(f"paired lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("no values")
    return Comparison(
        cdf_tdoa=cdf(a), cdf_coop=cdf(b),
        median_tdoa=float(np.median(a)), median_coop=float(np.median(b)),
        max_tdoa=float(a.max()), max_coop=float(b.max()),
        frac_tdoa_above_coop_max=float(np.mean(a > b.max())),
    )
