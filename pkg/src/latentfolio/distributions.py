"""Standardized innovation families: normal, Student and their
Fernandez-Steel skewed versions, all with zero mean and unit variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

FAMILIES = ("norm", "snorm", "std", "sstd")


def _base_scale(shape: float) -> float:
    # Student t with nu dof has variance nu / (nu - 2)
    return np.sqrt(shape / (shape - 2.0))


def _abs_moment(family: str, shape: float) -> float:
    """E|Y| for the unit-variance symmetric base."""
    if family in ("norm", "snorm"):
        return np.sqrt(2.0 / np.pi)
    nu = shape
    return float(
        2.0 * np.sqrt(nu - 2.0) * np.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2))
        / (np.sqrt(np.pi) * (nu - 1.0))
    )


@dataclass(frozen=True)
class Innovation:
    """Zero-mean unit-variance innovation law.

    ``skew`` is the Fernandez-Steel xi (1 is symmetric, < 1 left-skewed);
    ``shape`` the Student degrees of freedom (> 2).
    """

    family: str = "norm"
    skew: float = 1.0
    shape: float = np.inf

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not self.skew > 0:
            raise ValueError("skew must be positive")
        if self.family in ("std", "sstd") and not self.shape > 2:
            raise ValueError("Student shape must exceed 2")
        if self.family in ("norm", "std") and self.skew != 1.0:
            raise ValueError(f"family {self.family} is symmetric; skew must be 1")

    @property
    def student(self) -> bool:
        return self.family in ("std", "sstd")

    @property
    def skewed(self) -> bool:
        return self.family in ("snorm", "sstd")

    @property
    def n_params(self) -> int:
        return int(self.student) + int(self.skewed)

    # unit-variance symmetric base
    def _g_logpdf(self, x):
        if self.student:
            c = _base_scale(self.shape)
            return stats.t.logpdf(x * c, self.shape) + np.log(c)
        return stats.norm.logpdf(x)

    def _g_cdf(self, x):
        if self.student:
            return stats.t.cdf(x * _base_scale(self.shape), self.shape)
        return stats.norm.cdf(x)

    def _moments(self):
        xi = self.skew
        m = _abs_moment(self.family, self.shape) * (xi - 1.0 / xi)
        s = np.sqrt(xi**2 + xi**-2 - 1.0 - m**2)
        return m, s

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        xi = self.skew
        if xi == 1.0:
            return self._g_logpdf(z)
        m, s = self._moments()
        y = m + s * z
        arg = np.where(y < 0, y * xi, y / xi)
        return np.log(2.0 / (xi + 1.0 / xi)) + np.log(s) + self._g_logpdf(arg)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        xi = self.skew
        if xi == 1.0:
            return self._g_cdf(z)
        m, s = self._moments()
        y = m + s * z
        lower = 2.0 / (xi**2 + 1.0) * self._g_cdf(xi * y)
        upper = 1.0 - 2.0 * xi**2 / (xi**2 + 1.0) * (1.0 - self._g_cdf(y / xi))
        return np.where(y < 0, lower, upper)

    def rvs(self, size, rng: np.random.Generator) -> np.ndarray:
        if self.student:
            base = rng.standard_t(self.shape, size=size) / _base_scale(self.shape)
        else:
            base = rng.standard_normal(size)
        xi = self.skew
        if xi == 1.0:
            return base
        up = rng.random(size) < xi**2 / (1.0 + xi**2)
        y = np.where(up, xi * np.abs(base), -np.abs(base) / xi)
        m, s = self._moments()
        return (y - m) / s
