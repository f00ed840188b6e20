"""Monthly-rebalanced out-of-sample backtests, volatility targeting and
performance metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .allocation import AllocationWeights, estimate_covariance
from .autoencoder import encode
from .autoencoder import reconstruct as ae_reconstruct
from .data import ReturnsPanel, date_slice
from .nmf import reconstruct as nmf_reconstruct
from .strategies import FactorConfig, FactorFit, RebalanceContext, fit_factors, get_strategy, strategy_family

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BacktestConfig:
    cost_bps: float = 2.0
    estimation_window: int = 252
    vol_target: float | None = 0.05
    vol_lookbacks: tuple[int, ...] = (20, 60)
    annualization: int = 252
    max_leverage: float = 3.0
    drift: bool = True
    risk_free: float = 0.0
    gamma: float = 1.0
    alpha: float = 0.05

    def __post_init__(self):
        if self.cost_bps < 0:
            raise ValueError("cost_bps must be nonnegative")
        if self.estimation_window < 2 or min(self.vol_lookbacks) < 2:
            raise ValueError("estimation and volatility windows need at least 2 rows")


def vol_target_leverage(returns, cfg: BacktestConfig) -> float:
    """sigma_target / max(sigma_20, sigma_60) from annualized sample vols.

    Too short a history gives leverage 1; a vanishing vol hits the cap.
    """
    if cfg.vol_target is None:
        return 1.0
    r = np.asarray(returns, dtype=float)
    need = max(cfg.vol_lookbacks)
    if r.size < need:
        logger.warning("only %d returns for volatility targeting (need %d); leverage 1", r.size, need)
        return 1.0
    vol = max(r[-k:].std(ddof=1) for k in cfg.vol_lookbacks) * np.sqrt(cfg.annualization)
    if not vol > 0:
        return cfg.max_leverage
    return float(min(cfg.vol_target / vol, cfg.max_leverage))


def month_starts(dates: pd.DatetimeIndex) -> pd.DatetimeIndex:
    """First available date of each calendar month in ``dates``."""
    period = dates.to_period("M")
    first = np.r_[True, period[1:] != period[:-1]]
    return dates[first]


@dataclass
class SimulationResult:
    returns: pd.Series
    turnover: pd.Series  # traded notional per rebalance (fraction of NAV)
    exposure: pd.Series  # gross invested fraction per day


def simulate(
    panel: ReturnsPanel,
    targets: dict[pd.Timestamp, np.ndarray],
    cfg: BacktestConfig,
    exposure: np.ndarray | None = None,
    start=None,
) -> SimulationResult:
    """Daily accounting for leveraged target holdings set on rebalance dates.

    ``targets`` maps rebalance dates to NAV fractions per asset (the rest is
    cash earning zero). Between rebalances holdings drift with returns when
    ``cfg.drift``. ``exposure`` optionally scales each day's holdings
    (T_sim x d multipliers, used by the hedging overlay); changes in it cost
    the same proportional fee as rebalancing trades.
    """
    first = min(targets) if start is None else pd.Timestamp(start)
    sl = date_slice(panel.dates, first)
    dates = panel.dates[sl]
    X = panel.values[sl]
    n, d = X.shape
    mult = np.ones((n, d)) if exposure is None else np.asarray(exposure, dtype=float)
    if mult.shape != (n, d):
        raise ValueError(f"exposure must have shape {(n, d)}, got {mult.shape}")
    fee = cfg.cost_bps / 1e4

    out = np.empty(n)
    gross = np.empty(n)
    traded = {}
    h = np.zeros(d)
    prev_mult = mult[0]
    for t in range(n):
        cost = 0.0
        target = targets.get(dates[t])
        if target is not None:
            turn = float(np.abs(target - h).sum())
            traded[dates[t]] = turn
            cost = fee * turn
            h = np.array(target, dtype=float)
        m = mult[t]
        hedge_cost = fee * float((h * np.abs(m - prev_mult)).sum())
        prev_mult = m
        held = m * h
        gross[t] = held.sum()
        r = float(held @ X[t]) - cost - hedge_cost
        out[t] = r
        if cfg.drift:
            h = h * (1.0 + m * X[t]) / (1.0 + r)
    return SimulationResult(
        pd.Series(out, index=dates, name="return"),
        pd.Series(traded, name="turnover", dtype=float),
        pd.Series(gross, index=dates, name="exposure"),
    )


def max_drawdown(returns) -> float:
    nav = np.cumprod(1.0 + np.asarray(returns, dtype=float))
    peak = np.maximum.accumulate(np.r_[1.0, nav])[1:]
    return float(np.max(1.0 - nav / peak, initial=0.0))


def probabilistic_sharpe_ratio(sr: float, n: int, skew: float, kurt: float) -> float:
    denom = 1.0 - skew * sr + (kurt - 1.0) / 4.0 * sr**2
    if not denom > 0:
        return float("nan")
    return float(stats.norm.cdf(sr * np.sqrt(n - 1) / np.sqrt(denom)))


def min_track_record_length(sr: float, skew: float, kurt: float, alpha: float = 0.05) -> float:
    if sr == 0:
        return float("inf")
    z = stats.norm.ppf(1.0 - alpha)
    return float(1.0 + (1.0 - skew * sr + (kurt - 1.0) / 4.0 * sr**2) * (z / sr) ** 2)


def compute_metrics(returns, weights=None, risk_free: float = 0.0, gamma: float = 1.0, alpha: float = 0.05) -> dict:
    """Performance metrics of a daily return series.

    ``weights`` is the (n_rebalances x d) history of pre-leverage weights
    used for turnover (TTO) and concentration (SSPW). SR, CEQ and the
    moments are on the daily scale; kurtosis is non-excess.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise ValueError("need at least 2 returns")
    mu, sigma = r.mean(), r.std(ddof=1)
    sr = (mu - risk_free) / sigma if sigma > 0 else 0.0
    skew = float(stats.skew(r)) if sigma > 0 else 0.0
    kurt = float(stats.kurtosis(r, fisher=False)) if sigma > 0 else 3.0
    var = float(np.quantile(r, alpha))
    es = float(r[r <= var].mean())
    out = {
        "total_return": float(np.prod(1.0 + r) - 1.0),
        "mean": float(mu),
        "volatility": float(sigma),
        "skewness": skew,
        "kurtosis": kurt,
        "VaR": var,
        "ES": es,
        "SR": float(sr),
        "PSR": probabilistic_sharpe_ratio(sr, r.size, skew, kurt),
        "minTRL": min_track_record_length(sr, skew, kurt, alpha),
        "CEQ": float((mu - risk_free) - gamma / 2.0 * sigma**2),
        "MDD": max_drawdown(r),
    }
    if weights is not None:
        a = np.atleast_2d(np.asarray(weights, dtype=float))
        T = a.shape[0]
        out["TTO"] = float(np.abs(np.diff(a, axis=0)).sum() / T)
        out["SSPW"] = float((a**2).sum() / T)
    return out


def r_squared(x, xhat) -> float:
    x, xhat = np.asarray(x, float), np.asarray(xhat, float)
    if x.size < 2 or x.shape != xhat.shape:
        raise ValueError("need two equal-length series of at least 2 points")
    sst = ((x - x.mean()) ** 2).sum()
    if not sst > 0:
        raise ValueError("R^2 undefined for a constant series")
    return float(1.0 - ((x - xhat) ** 2).sum() / sst)


def input_factor_correlation(X, Z) -> np.ndarray:
    """d x p Pearson correlations between input columns and factor columns."""
    X, Z = np.asarray(X, float), np.asarray(Z, float)
    if X.shape[0] != Z.shape[0]:
        raise ValueError("inputs and factors must have the same number of rows")
    Xc, Zc = X - X.mean(axis=0), Z - Z.mean(axis=0)
    sx, sz = np.sqrt((Xc**2).sum(axis=0)), np.sqrt((Zc**2).sum(axis=0))
    if not (sx > 0).all() or not (sz > 0).all():
        raise ValueError("correlation undefined for a constant column")
    return (Xc.T @ Zc) / np.outer(sx, sz)


@dataclass
class BacktestReport:
    strategy: str
    returns: pd.Series
    weights: pd.DataFrame  # pre-leverage weights per rebalance date
    leverage: pd.Series
    turnover: pd.Series
    exposure: pd.Series
    metrics: dict = field(default_factory=dict)

    @property
    def nav(self) -> pd.Series:
        return (1.0 + self.returns).cumprod().rename("nav")

    def history(self) -> list[AllocationWeights]:
        return [
            AllocationWeights(date, self.strategy, row.to_numpy(), float(self.leverage[date]))
            for date, row in self.weights.iterrows()
        ]

    def targets(self) -> dict[pd.Timestamp, np.ndarray]:
        return {date: row.to_numpy() * self.leverage[date] for date, row in self.weights.iterrows()}


@dataclass
class FactorDiagnostics:
    r2: pd.Series  # out-of-sample R^2 per asset
    factor_corr: pd.DataFrame  # average input-factor Pearson correlation (d x p)


@dataclass
class BacktestRun:
    reports: dict[str, BacktestReport]
    fits: list[FactorFit]
    diagnostics: dict[str, FactorDiagnostics]
    rebalance_dates: pd.DatetimeIndex


def _name(strategy) -> str:
    return strategy if isinstance(strategy, str) else getattr(strategy, "__name__", "custom")


def report_from_targets(panel, name, weights, leverage, cfg, exposure=None) -> BacktestReport:
    """Simulate stored rebalance weights / leverage and compute metrics."""
    targets = {date: weights.loc[date].to_numpy() * leverage[date] for date in weights.index}
    sim = simulate(panel, targets, cfg, exposure=exposure)
    metrics = compute_metrics(sim.returns, weights.to_numpy(), cfg.risk_free, cfg.gamma, cfg.alpha)
    return BacktestReport(name, sim.returns, weights, leverage, sim.turnover, sim.exposure, metrics)


def run_backtest(
    panel: ReturnsPanel,
    strategies,
    cfg: BacktestConfig,
    test_start,
    factor_cfg: FactorConfig | None = None,
    test_end=None,
    seed: int = 0,
) -> BacktestRun:
    """Rebalance on the first trading day of each month from ``test_start``.

    All strategies share one schedule and one set of factor refits per
    date. A strategy that fails on a date keeps its previous weights.
    """
    if isinstance(strategies, str) or callable(strategies):
        strategies = [strategies]
    names = [_name(s) for s in strategies]
    fns = [get_strategy(s) for s in strategies]
    families = {strategy_family(s) for s in strategies} - {None}
    factor_cfg = factor_cfg or FactorConfig()

    test = date_slice(panel.dates, test_start, test_end, inclusive_end=True)
    if test.stop <= test.start:
        raise ValueError("empty test period")
    sim_panel = panel.rows(slice(0, test.stop))
    rebal = month_starts(panel.dates[test])
    first_pos = int(panel.dates.searchsorted(rebal[0]))
    if first_pos < cfg.estimation_window:
        raise ValueError(f"{first_pos} rows before the test start; estimation window needs {cfg.estimation_window}")

    weights = {n: {} for n in names}
    leverage = {n: {} for n in names}
    fits: list[FactorFit] = []
    for m, date in enumerate(rebal):
        pos = int(panel.dates.searchsorted(date))
        window = panel.values[pos - cfg.estimation_window : pos]
        month_seed = seed + 1000 * m

        def fitter(date=date, month_seed=month_seed):
            fit = fit_factors(panel, date, factor_cfg, families=families, seed=month_seed)
            fits.append(fit)
            return fit

        ctx = RebalanceContext(
            date, panel.rows(slice(0, pos)), window, estimate_covariance(window), month_seed, factor_cfg, fitter
        )
        for name, fn in zip(names, fns):
            try:
                a = np.asarray(fn(ctx), dtype=float)
                if a.shape != (panel.d,) or not np.isfinite(a).all() or (a < -1e-12).any():
                    raise ValueError(f"invalid weights {a}")
                a = np.maximum(a, 0.0)
                a = a / a.sum()
            except Exception as exc:  # noqa: BLE001 - any strategy failure holds weights
                if not weights[name]:
                    raise RuntimeError(f"strategy {name} failed on its first rebalance {date.date()}: {exc}") from exc
                logger.warning("strategy %s failed on %s (%s); holding previous weights", name, date.date(), exc)
                a = weights[name][rebal[m - 1]]
            weights[name][date] = a
            leverage[name][date] = vol_target_leverage(window[-max(cfg.vol_lookbacks) :] @ a, cfg)

    reports = {}
    for name in names:
        w = pd.DataFrame.from_dict(weights[name], orient="index", columns=list(panel.codes))
        lev = pd.Series(leverage[name], name="leverage")
        reports[name] = report_from_targets(sim_panel, name, w, lev, cfg)

    diagnostics = {fam: factor_diagnostics(panel, fits, fam, rebal, test.stop) for fam in families if fits}
    return BacktestRun(reports, fits, diagnostics, rebal)


def factor_diagnostics(panel, fits, family, rebal, stop) -> FactorDiagnostics:
    """Out-of-sample R^2 per asset (ensemble-mean reconstruction) and the
    month-averaged input-factor correlation of the first ensemble member."""
    xs, xhats, corrs = [], [], []
    for i, fit in enumerate(fits):
        lo = int(panel.dates.searchsorted(fit.date))
        hi = int(panel.dates.searchsorted(rebal[i + 1])) if i + 1 < len(rebal) else stop
        X = fit.normalizer.transform(panel.values[lo:hi])
        models = fit.models(family)
        if family == "nmf":
            xhat = np.mean([nmf_reconstruct(m, X) for m in models], axis=0)
            Z = models[0].factors(X)
        else:
            xhat = np.mean([ae_reconstruct(m, X) for m in models], axis=0)
            Z = encode(models[0], X)
        xs.append(X)
        xhats.append(xhat)
        if X.shape[0] > 2:
            with np.errstate(invalid="ignore", divide="ignore"):
                Xc, Zc = X - X.mean(0), Z - Z.mean(0)
                corr = (Xc.T @ Zc) / np.outer(np.sqrt((Xc**2).sum(0)), np.sqrt((Zc**2).sum(0)))
            corrs.append(corr)
    X, Xhat = np.vstack(xs), np.vstack(xhats)
    r2 = []
    for j in range(panel.d):
        try:
            r2.append(r_squared(X[:, j], Xhat[:, j]))
        except ValueError:
            r2.append(np.nan)
    p = fits[0].models(family)[0].p
    corr = np.nanmean(np.stack(corrs), axis=0) if corrs else np.full((panel.d, p), np.nan)
    return FactorDiagnostics(
        pd.Series(r2, index=list(panel.codes), name="r2"),
        pd.DataFrame(corr, index=list(panel.codes), columns=[f"factor_{k}" for k in range(p)]),
    )
