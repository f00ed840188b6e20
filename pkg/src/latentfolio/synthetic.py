"""Seeded synthetic return panels with planted structure."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data import ReturnsPanel


def business_dates(T: int, start: str = "2010-01-01") -> pd.DatetimeIndex:
    return pd.bdate_range(start, periods=T)


def block_labels(d: int, k: int) -> np.ndarray:
    """Contiguous near-equal blocks, e.g. d=12, k=4 -> 0,0,0,1,1,1,..."""
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must lie in [1, d={d}]")
    return np.repeat(np.arange(k), np.diff(np.linspace(0, d, k + 1).round().astype(int)))


def planted_block_panel(
    d: int = 12,
    T: int = 750,
    k: int = 4,
    rho: float = 0.9,
    vol: float = 0.01,
    drift: float = 2e-4,
    seed: int = 0,
    start: str = "2010-01-01",
) -> tuple[ReturnsPanel, np.ndarray]:
    """Gaussian panel with k independent blocks of within-block correlation rho.

    Returns the panel and the planted labels. Each asset is
    ``vol * (sqrt(rho) f_block + sqrt(1 - rho) e) + drift``.
    """
    rng = np.random.default_rng(seed)
    labels = block_labels(d, k)
    f = rng.standard_normal((T, k))
    e = rng.standard_normal((T, d))
    scale = vol * rng.uniform(0.6, 1.4, size=d)
    X = scale * (np.sqrt(rho) * f[:, labels] + np.sqrt(1.0 - rho) * e) + drift
    codes = tuple(f"A{i:02d}" for i in range(d))
    classes = tuple(f"class{labels[i]}" for i in range(d))
    return ReturnsPanel(business_dates(T, start), codes, X, classes), labels


def simulate_garch_factors(
    T: int,
    k: int,
    omega: float = 0.05,
    alpha: float = 0.15,
    beta: float = 0.8,
    seed: int = 0,
) -> np.ndarray:
    """k independent zero-mean GARCH(1,1) Student-t(6) unit-variance series."""
    rng = np.random.default_rng(seed)
    nu = 6.0
    z = rng.standard_t(nu, size=(T, k)) / np.sqrt(nu / (nu - 2.0))
    out = np.empty((T, k))
    s2 = np.full(k, omega / (1.0 - alpha - beta))
    eps = np.zeros(k)
    for t in range(T):
        s2 = omega + alpha * eps**2 + beta * s2
        eps = np.sqrt(s2) * z[t]
        out[t] = eps
    return out


def crash_regime_panel(
    d: int = 8,
    T: int = 1500,
    k: int = 2,
    rho: float = 0.85,
    vol: float = 0.01,
    n_crashes: int = 4,
    buildup: int = 15,
    crash_days: int = 10,
    seed: int = 0,
    crash_from: int = 750,
    start: str = "2010-01-01",
) -> tuple[ReturnsPanel, np.ndarray, np.ndarray]:
    """Block panel with planted crashes preceded by volatility build-ups.

    Block factors follow GARCH(1,1). After ``crash_from`` one block at a time
    enters a crash: ``buildup`` days of steadily increasing volatility with a
    small negative drift, then ``crash_days`` of strongly negative returns.
    Returns (panel, labels, crash-day mask T x k).
    """
    rng = np.random.default_rng(seed)
    labels = block_labels(d, k)
    f = simulate_garch_factors(T, k, seed=seed + 1)
    mask = np.zeros((T, k), dtype=bool)
    span = (T - crash_from) // max(n_crashes, 1)
    for i in range(n_crashes):
        blk = i % k
        lo = crash_from + i * span + rng.integers(0, max(span - buildup - crash_days, 1))
        ramp = np.linspace(1.5, 4.0, buildup)
        f[lo : lo + buildup, blk] = ramp * np.abs(f[lo : lo + buildup, blk]) * rng.choice([-1, 1], buildup) - 0.3 * ramp
        c0 = lo + buildup
        f[c0 : c0 + crash_days, blk] = -3.0 + 1.5 * rng.standard_normal(crash_days)
        mask[c0 : c0 + crash_days, blk] = True
    e = rng.standard_normal((T, d))
    X = vol * (np.sqrt(rho) * f[:, labels] + np.sqrt(1.0 - rho) * e) + 3e-4
    codes = tuple(f"A{i:02d}" for i in range(d))
    classes = tuple(f"class{labels[i]}" for i in range(d))
    return ReturnsPanel(business_dates(T, start), codes, X, classes), labels, mask
