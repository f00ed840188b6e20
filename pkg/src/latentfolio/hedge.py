"""Tail-event hedging from the encoder's linear activations.

Each factor's pre-ReLU series is modelled with ARMA-GARCH; the one-step
probability that it falls to or below zero drives a signal that moves the
factor cluster's capital to cash for the next day.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .allocation import AllocationWeights
from .autoencoder import AutoencoderModel, linear_activation
from .backtest import BacktestConfig, BacktestReport, report_from_targets, vol_target_leverage
from .clustering import ClusterAssignment, assign_clusters
from .data import Normalizer, ReturnsPanel, date_slice
from .garch import (
    ArmaGarchModel,
    GarchGrid,
    fit_arma_garch,
    forecast_one_step,
    in_sample_forecasts,
    select_arma_garch,
)

logger = logging.getLogger(__name__)

THRESHOLD_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass(frozen=True)
class LinearActivationSeries:
    z: np.ndarray  # T x p pre-ReLU values
    classes: np.ndarray  # 1 where the unit is inactive (z <= 0)


def linear_activations(model: AutoencoderModel, X) -> LinearActivationSeries:
    """Pre-ReLU activations of normalized inputs and their regime classes."""
    z = linear_activation(model, np.atleast_2d(np.asarray(X, dtype=float)))
    return LinearActivationSeries(z, (z <= 0).astype(int))


def exceedance_probability(model: ArmaGarchModel, z_hat, sigma_hat):
    """P(z_{t+1} <= 0) = F(-z_hat / sigma_hat) under the fitted innovation law."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if (sigma_hat <= 0).any():
        raise ValueError("sigma_hat must be positive")
    p = model.innovation.cdf(-np.asarray(z_hat, dtype=float) / sigma_hat)
    return float(p) if np.ndim(p) == 0 else p


def predicted_rate(probs, u) -> float:
    return float(np.mean(np.asarray(probs) >= u))


def calibrate_threshold(probs, classes) -> float:
    """Grid threshold u whose predicted event rate best matches the realized
    rate; ties go to the larger u."""
    probs = np.asarray(probs, dtype=float)
    classes = np.asarray(classes)
    if probs.shape != classes.shape or probs.size == 0:
        raise ValueError("probs and classes must be aligned and non-empty")
    if np.ptp(probs) == 0:
        logger.warning("constant probabilities; threshold set to 0.5")
        return 0.5
    alpha = classes.mean()
    gaps = np.abs((probs[None, :] >= THRESHOLD_GRID[:, None]).mean(axis=1) - alpha)
    best = np.flatnonzero(gaps <= gaps.min() + 1e-12)
    return float(THRESHOLD_GRID[best[-1]])


def roc_auc(scores, classes) -> float:
    """Trapezoidal area under the ROC curve; ties in scores share a step."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(classes).astype(bool)
    n_pos, n_neg = y.sum(), (~y).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last] / n_pos]
    fpr = np.r_[0.0, np.cumsum(~y)[last] / n_neg]
    return float(np.trapezoid(tpr, fpr))


def validate_classifier(probs, classes, u) -> dict:
    """AUC, realized and predicted event rates, excess exceedance, FPR, FNR.

    ``u`` may be a scalar or a per-observation threshold array.
    """
    probs = np.asarray(probs, dtype=float)
    c = np.asarray(classes).astype(bool)
    pred = probs >= np.asarray(u, dtype=float)
    neg, pos = (~c).sum(), c.sum()
    true_rate, pred_rate = float(c.mean()), float(pred.mean())
    return {
        "AUC": roc_auc(probs, c),
        "alpha": true_rate,
        "alpha_prime": pred_rate,
        "Ex": pred_rate - true_rate,
        "FPR": float((pred & ~c).sum() / neg) if neg else float("nan"),
        "FNR": float((~pred & c).sum() / pos) if pos else float("nan"),
    }


@dataclass(frozen=True)
class TailClassifier:
    model: ArmaGarchModel
    threshold: float
    alpha: float  # in-sample event rate


def fit_tail_classifier(z_window, grid: GarchGrid = GarchGrid(), window: int = 250) -> TailClassifier:
    z = np.asarray(z_window, dtype=float)[-window:]
    model = select_arma_garch(z, grid, window)
    z_hat, sd = in_sample_forecasts(model, z)
    probs = exceedance_probability(model, z_hat, sd)
    classes = (z <= 0).astype(int)
    return TailClassifier(model, calibrate_threshold(probs, classes), float(classes.mean()))


def hedge_weights(base: AllocationWeights, assignment: ClusterAssignment, signals, fraction: float = 1.0):
    """Cut the capital of signaled clusters by ``fraction``; the freed weight
    is held as cash. Returns (weights, cash fraction)."""
    signals = np.asarray(signals).astype(bool)
    if signals.size != assignment.p:
        raise ValueError(f"need {assignment.p} signals, got {signals.size}")
    mult = exposure_multipliers(assignment, signals[None, :], fraction)[0]
    w = base.weights * mult
    return replace(base, weights=w), float(base.weights.sum() - w.sum())


def exposure_multipliers(assignment: ClusterAssignment, signals, fraction: float = 1.0) -> np.ndarray:
    """T x d multipliers: 1 - fraction for assets of signaled clusters."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    s = np.atleast_2d(np.asarray(signals)).astype(bool)
    out = np.ones((s.shape[0], assignment.d))
    labels = assignment.labels
    ok = labels >= 0
    out[:, ok] = np.where(s[:, labels[ok]], 1.0 - fraction, 1.0)
    return out


@dataclass(frozen=True)
class HedgeConfig:
    window: int = 250
    grid: GarchGrid = field(default_factory=GarchGrid)
    fraction: float = 1.0
    refit_every: int = 1  # re-estimate parameters every n test days


@dataclass
class MonthModels:
    """Encoder and normalizer used over one rebalance month."""

    date: pd.Timestamp
    model: AutoencoderModel
    normalizer: Normalizer


@dataclass
class SignalResult:
    signals: pd.DataFrame  # long: date, factor, prob, signal, cls, threshold
    assignments: dict[pd.Timestamp, ClusterAssignment]

    def signal_matrix(self, dates: pd.DatetimeIndex, p: int) -> np.ndarray:
        out = np.zeros((dates.size, p), dtype=int)
        if self.signals.empty:
            return out
        pos = dates.get_indexer(pd.DatetimeIndex(self.signals["date"]))
        keep = pos >= 0
        out[pos[keep], self.signals["factor"].to_numpy()[keep]] = self.signals["signal"].to_numpy()[keep]
        return out


def _factor_signals(series, dates, classes, lo, hi, k, cfg: HedgeConfig):
    """Signal rows for factor ``k`` over rows [lo, hi) of its activation series."""
    try:
        clf = fit_tail_classifier(series[lo - cfg.window : lo], cfg.grid, cfg.window)
    except (ValueError, RuntimeError) as exc:
        logger.warning("factor %d on %s: no classifier (%s); no signals this month", k, dates[lo].date(), exc)
        return []
    model, rows = clf.model, []
    for t in range(lo, hi):
        hist = series[t - cfg.window : t]
        if cfg.refit_every and t > lo and (t - lo) % cfg.refit_every == 0:
            try:
                model = fit_arma_garch(hist, model.orders, model.family, cfg.window, start=model)
            except (ValueError, RuntimeError) as exc:
                logger.warning("factor %d refit failed on %s (%s)", k, dates[t].date(), exc)
        z_hat, sd = forecast_one_step(model, hist)
        prob = exceedance_probability(model, z_hat, sd)
        rows.append((dates[t], k, prob, int(prob >= clf.threshold), int(classes[t]), clf.threshold))
    return rows


def forecast_signals(panel: ReturnsPanel, months: list[MonthModels], cfg: HedgeConfig, end=None, jobs: int = 1) -> SignalResult:
    """Daily exceedance probabilities and signals over the test months.

    Orders and family are selected at each month start on the previous
    ``cfg.window`` activations; parameters are re-estimated on the trailing
    window every ``cfg.refit_every`` days from the previous estimate.
    Factor-month tasks are independent and run on ``jobs`` processes.
    """
    stop = date_slice(panel.dates, None, end, inclusive_end=True).stop if end is not None else panel.T
    tasks, assignments = [], {}
    for m, mm in enumerate(months):
        lo = int(panel.dates.searchsorted(mm.date))
        hi = int(panel.dates.searchsorted(months[m + 1].date)) if m + 1 < len(months) else stop
        if lo < cfg.window:
            raise ValueError(f"{lo} activations before {mm.date.date()}; need {cfg.window}")
        assignments[mm.date] = assign_clusters(mm.model.W, source="autoencoder")
        acts = linear_activations(mm.model, mm.normalizer.transform(panel.values[:hi]))
        for k in range(acts.z.shape[1]):
            tasks.append((acts.z[:, k], panel.dates[:hi], acts.classes[:, k], lo, hi, k, cfg))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_factor_signals, *zip(*tasks)))
    else:
        results = [_factor_signals(*t) for t in tasks]
    rows = [r for res in results for r in res]
    signals = pd.DataFrame(rows, columns=["date", "factor", "prob", "signal", "cls", "threshold"])
    signals = signals.sort_values(["date", "factor"], kind="mergesort").reset_index(drop=True)
    return SignalResult(signals, assignments)


def validation_table(signals: pd.DataFrame, p: int) -> pd.DataFrame:
    rows = []
    for k in range(p):
        s = signals[signals["factor"] == k]
        if s.empty:
            rows.append({"factor": k, "AUC": np.nan, "alpha": np.nan, "alpha_prime": np.nan, "Ex": np.nan,
                         "FPR": np.nan, "FNR": np.nan, "n": 0})
            continue
        res = validate_classifier(s["prob"], s["cls"], s["threshold"])
        rows.append({"factor": k, **res, "n": len(s)})
    return pd.DataFrame(rows)


def apply_hedge(
    panel: ReturnsPanel,
    base: BacktestReport,
    assignments: dict[pd.Timestamp, ClusterAssignment],
    signals: np.ndarray,
    cfg: BacktestConfig,
    fraction: float = 1.0,
    name: str | None = None,
) -> BacktestReport:
    """Re-simulate ``base`` with signaled clusters moved to cash.

    ``signals`` is (n_days x p) over the simulation dates, starting at the
    first rebalance. Leverage is re-targeted on the hedged trailing returns
    by the same rule as the unhedged backtest.
    """
    dates = base.weights.index
    sim = date_slice(panel.dates, dates[0], base.returns.index[-1], inclusive_end=True)
    sim_dates = panel.dates[sim]
    if signals.shape[0] != sim_dates.size:
        raise ValueError(f"signals cover {signals.shape[0]} days, backtest {sim_dates.size}")
    mult = np.ones((sim.stop, panel.d))
    for i, date in enumerate(dates):
        lo = sim_dates.searchsorted(date)
        hi = sim_dates.searchsorted(dates[i + 1]) if i + 1 < len(dates) else sim_dates.size
        mult[sim.start + lo : sim.start + hi] = exposure_multipliers(assignments[date], signals[lo:hi], fraction)

    lookback = max(cfg.vol_lookbacks)
    leverage = {}
    for date in dates:
        pos = int(panel.dates.searchsorted(date))
        window = panel.values[pos - lookback : pos] * mult[pos - lookback : pos]
        leverage[date] = vol_target_leverage(window @ base.weights.loc[date].to_numpy(), cfg)
    lev = pd.Series(leverage, name="leverage")
    return report_from_targets(
        panel.rows(slice(0, sim.stop)), name or f"{base.strategy}_hedged", base.weights, lev, cfg, exposure=mult[sim]
    )
