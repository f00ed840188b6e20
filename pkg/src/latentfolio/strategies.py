"""Named allocation strategies and per-rebalance factor-model refits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from . import allocation as al
from .autoencoder import AutoencoderModel, TrainConfig, TrainReport, train_ensemble
from .clustering import assign_clusters
from .data import Normalizer, ReturnsPanel, date_slice, fit_normalizer
from .nmf import ConvexNmfModel, fit_convex_nmf, unit_normalize_loadings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FactorConfig:
    p: int = 4
    n_seeds: int = 15
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-6
    train: TrainConfig = field(default_factory=TrainConfig)
    val_months: int = 1


@dataclass
class FactorFit:
    """Models refit at one rebalance date on the history before it."""

    date: pd.Timestamp
    train: slice
    val: slice
    normalizer: Normalizer
    nmf: list[ConvexNmfModel] = field(default_factory=list)
    ae: list[AutoencoderModel] = field(default_factory=list)
    ae_reports: list[TrainReport] = field(default_factory=list)

    def models(self, family: str):
        return self.nmf if family == "nmf" else self.ae


def refit_split(dates: pd.DatetimeIndex, rebalance: pd.Timestamp, val_months: int = 1) -> tuple[slice, slice]:
    """Train on everything before the last ``val_months`` calendar months,
    validate on those months, both strictly before ``rebalance``."""
    hist = date_slice(dates, None, rebalance)
    val = date_slice(dates, rebalance - pd.DateOffset(months=val_months), rebalance)
    return slice(0, val.start), slice(val.start, hist.stop)


def fit_factors(panel: ReturnsPanel, rebalance, cfg: FactorConfig, families=("nmf", "ae"), seed: int = 0) -> FactorFit:
    tr, val = refit_split(panel.dates, pd.Timestamp(rebalance), cfg.val_months)
    if tr.stop - tr.start < max(cfg.p, 2) or val.stop - val.start < 2:
        raise ValueError(f"not enough history before {pd.Timestamp(rebalance).date()} to refit factor models")
    norm = fit_normalizer(panel, tr)
    Xtr = norm.transform(panel.values[tr])
    Xval = norm.transform(panel.values[val])
    fit = FactorFit(pd.Timestamp(rebalance), tr, val, norm)
    nmf = [
        fit_convex_nmf(Xtr, cfg.p, max_iter=cfg.nmf_max_iter, tol=cfg.nmf_tol, seed=seed + i)
        for i in range(cfg.n_seeds)
    ]
    fit.nmf = [unit_normalize_loadings(m) for m in nmf]
    if "ae" in families:
        fit.ae, fit.ae_reports = train_ensemble(Xtr, Xval, cfg.train, n_seeds=cfg.n_seeds, warm_starts=nmf, seed=seed)
    return fit


@dataclass
class RebalanceContext:
    """Inputs available to a strategy at one rebalance date.

    ``window`` is the raw-return estimation window (the last
    ``estimation_window`` rows before ``date``) and ``cov`` its sample
    covariance. Factor models are refit lazily, once per date, by
    ``fitter`` and shared by every strategy.
    """

    date: pd.Timestamp
    history: ReturnsPanel
    window: np.ndarray
    cov: np.ndarray
    seed: int
    factor_cfg: FactorConfig
    fitter: Callable[[], FactorFit] | None = None
    _fit: FactorFit | None = None

    @property
    def corr(self) -> np.ndarray:
        return al.cov_to_corr(self.cov)

    def factors(self) -> FactorFit:
        if self._fit is None:
            if self.fitter is None:
                raise RuntimeError("no factor fitter configured for this backtest")
            self._fit = self.fitter()
        return self._fit


def _standardize(x):
    return (x - x.mean(axis=0)) / x.std(axis=0, ddof=1)


def _factor_strategy(family: str, rule: str):
    def weights(ctx: RebalanceContext) -> np.ndarray:
        out = []
        for model in ctx.factors().models(family):
            assignment = assign_clusters(model.W, source="nmf" if family == "nmf" else "autoencoder")
            if rule == "rp":
                out.append(al.aerp_weights(ctx.cov, assignment))
            elif rule == "rcw":
                out.append(al.aercw_weights(ctx.cov, assignment, model.W))
            else:
                out.append(al.aeaa_weights(assignment))
        # ensemble: average the members' portfolio weights
        return np.mean(out, axis=0)

    weights.family = family
    return weights


STRATEGIES: dict[str, Callable[[RebalanceContext], np.ndarray]] = {
    "equal": lambda c: al.equal_weights(c.history.d),
    "equal_class": lambda c: al.equal_class_weights(c.history.classes),
    "ivp": lambda c: al.inverse_variance_weights(c.cov),
    "erc": lambda c: al.risk_budgeting_weights(c.cov),
    "markowitz": lambda c: al.markowitz_weights(c.cov),
    "hrp": lambda c: al.hrp_weights(c.cov, c.corr),
    "hcaa": lambda c: al.hcaa_weights(c.corr),
    "kmaa": lambda c: al.kmaa_weights(_standardize(c.window), c.factor_cfg.p, c.seed),
    "nmfrp": _factor_strategy("nmf", "rp"),
    "nmfrcw": _factor_strategy("nmf", "rcw"),
    "nmfaa": _factor_strategy("nmf", "aa"),
    "aerp": _factor_strategy("ae", "rp"),
    "aercw": _factor_strategy("ae", "rcw"),
    "aeaa": _factor_strategy("ae", "aa"),
}


def get_strategy(name):
    if callable(name):
        return name
    try:
        return STRATEGIES[name]
    except KeyError:
        raise KeyError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}") from None


def strategy_family(name) -> str | None:
    return getattr(get_strategy(name), "family", None)
