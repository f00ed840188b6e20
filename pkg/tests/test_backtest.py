import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import compound, psr

from latentfolio.autoencoder import TrainConfig
from latentfolio.backtest import (
    BacktestConfig,
    compute_metrics,
    input_factor_correlation,
    max_drawdown,
    min_track_record_length,
    month_starts,
    probabilistic_sharpe_ratio,
    r_squared,
    run_backtest,
    simulate,
    vol_target_leverage,
)
from latentfolio.data import ReturnsPanel
from latentfolio.strategies import FactorConfig
from latentfolio.synthetic import business_dates, planted_block_panel

NO_COST = BacktestConfig(cost_bps=0.0, vol_target=None)


def _panel(X, start="2015-01-01"):
    X = np.asarray(X, float)
    return ReturnsPanel(business_dates(X.shape[0], start), tuple(f"A{i}" for i in range(X.shape[1])), X)


def _series_with_vols(s20, s60, ann=252):
    # last 20 returns with annualized sd s20, the 60-row window with sd s60 (both ddof 1)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=40), rng.normal(size=20)
    a, b = a - a.mean(), b - b.mean()
    v20, v60 = s20**2 / ann, s60**2 / ann
    v40 = (59 * v60 - 19 * v20) / 39
    return np.r_[a / a.std(ddof=1) * np.sqrt(v40), b / b.std(ddof=1) * np.sqrt(v20)]


@pytest.mark.parametrize("s20, s60, expected", [(0.10, 0.08, 0.5), (0.05, 0.05, 1.0), (0.01, 0.01, 3.0)])
def test_vol_target_examples(s20, s60, expected):
    r = _series_with_vols(s20, s60)
    assert r[-20:].std(ddof=1) * math.sqrt(252) == pytest.approx(s20)
    assert vol_target_leverage(r, BacktestConfig()) == pytest.approx(expected, rel=1e-12)


def test_vol_target_degenerate():
    assert vol_target_leverage(np.zeros(60), BacktestConfig()) == 3.0
    assert vol_target_leverage(np.ones(10), BacktestConfig()) == 1.0


def test_month_starts():
    dates = pd.bdate_range("2020-01-30", "2020-04-02")
    got = month_starts(dates)
    assert list(got.strftime("%Y-%m-%d")) == ["2020-01-30", "2020-02-03", "2020-03-02", "2020-04-01"]


def test_constant_weights_identity(rng):
    X = rng.normal(0.0003, 0.01, size=(300, 3))
    panel = _panel(X)
    a = np.array([0.5, 0.3, 0.2])
    sim = simulate(panel, {panel.dates[0]: a}, NO_COST)
    nav = np.cumprod(1 + sim.returns.to_numpy())
    np.testing.assert_allclose(nav, compound(a, X), rtol=1e-12)
    # first day: exact weighted sum
    assert sim.returns.iloc[0] == pytest.approx(a @ X[0], abs=1e-18)


def test_full_turnover_costs_four_bps(rng):
    X = rng.normal(0, 0.01, size=(10, 2))
    panel = _panel(X)
    # without drift the held position is exactly the target, so switching moves 2.0
    cfg = BacktestConfig(cost_bps=2.0, vol_target=None, drift=False)
    targets = {panel.dates[0]: np.array([1.0, 0.0]), panel.dates[5]: np.array([0.0, 1.0])}
    sim = simulate(panel, targets, cfg)
    free = simulate(panel, targets, replace(cfg, cost_bps=0.0))
    diff = (free.returns - sim.returns).to_numpy()
    # entry pays 2 bps on a unit position; the switch day pays 4 bps
    assert diff[0] == pytest.approx(2e-4, abs=1e-15)
    assert sim.turnover.iloc[1] == 2.0
    assert sim.returns.iloc[5] == pytest.approx(X[5, 1] - 4e-4, abs=1e-15)


def test_leverage_linearity(rng):
    X = rng.normal(0, 0.01, size=(120, 3))
    panel = _panel(X)
    cfg = replace(NO_COST, drift=False)
    a = np.array([0.2, 0.3, 0.5])
    dates = month_starts(panel.dates)
    full = simulate(panel, {d: a for d in dates}, cfg).returns
    half = simulate(panel, {d: 0.5 * a for d in dates}, cfg).returns
    np.testing.assert_allclose(half, 0.5 * full, rtol=1e-14)
    assert half.std() == pytest.approx(0.5 * full.std(), rel=1e-12)


def test_metric_examples():
    assert probabilistic_sharpe_ratio(0.0, 100, 0.0, 3.0) == 0.5
    assert probabilistic_sharpe_ratio(0.1, 101, 0.0, 3.0) == pytest.approx(psr(0.1, 101, 0, 3), abs=1e-12)
    assert probabilistic_sharpe_ratio(0.1, 101, 0.0, 3.0) == pytest.approx(0.8406, abs=5e-4)
    assert min_track_record_length(0.1, 0.0, 3.0) == pytest.approx(1 + 1.005 * (1.6448536269514722 / 0.1) ** 2)
    assert min_track_record_length(0.1, 0.0, 3.0) == pytest.approx(272.9, abs=0.5)


def test_turnover_and_concentration(rng):
    r = rng.normal(0, 0.01, 50)
    m = compute_metrics(r, np.full((12, 4), 0.25))
    assert m["TTO"] == 0.0 and m["SSPW"] == pytest.approx(0.25)
    m = compute_metrics(r, [[1, 0], [0, 1], [0, 1]])
    assert m["TTO"] == pytest.approx(2 / 3) and m["SSPW"] == pytest.approx(1.0)


def test_metric_definitions(rng):
    r = rng.standard_t(4, 1000) * 0.01
    m = compute_metrics(r, risk_free=1e-4, gamma=3.0)
    assert m["SR"] == pytest.approx((r.mean() - 1e-4) / r.std(ddof=1))
    assert m["CEQ"] == pytest.approx(r.mean() - 1e-4 - 1.5 * r.var(ddof=1))
    assert m["VaR"] == pytest.approx(np.quantile(r, 0.05))
    nav = np.cumprod(1 + r)
    assert m["MDD"] == pytest.approx(np.max(1 - nav / np.maximum.accumulate(np.maximum(nav, 1))))


@given(st.integers(0, 10_000), st.floats(-0.002, 0.002))
@settings(max_examples=100, deadline=None)
def test_metric_invariants(seed, drift):
    rng = np.random.default_rng(seed)
    r = np.clip(rng.normal(drift, 0.01, 200), -0.99, None)
    m = compute_metrics(r)
    assert m["ES"] <= m["VaR"]
    assert 0.0 <= m["MDD"] <= 1.0
    assert 0.0 < m["PSR"] < 1.0
    assert (probabilistic_sharpe_ratio(m["SR"] + 0.01, 200, 0.0, 3.0) > probabilistic_sharpe_ratio(m["SR"], 200, 0.0, 3.0))


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_zero_turnover_iff_constant(seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(3), size=5)
    const = np.repeat(w[:1], 5, axis=0)
    r = rng.normal(size=10)
    assert compute_metrics(r, const)["TTO"] == 0.0
    assert compute_metrics(r, w)["TTO"] > 0.0


def test_max_drawdown_examples():
    assert max_drawdown([0.1, 0.1]) == 0.0
    assert max_drawdown([-0.5, 1.0, -0.5]) == pytest.approx(0.5)


def test_r_squared_examples(rng):
    x = rng.normal(size=100)
    x -= x.mean()
    assert r_squared(x, x) == 1.0
    assert r_squared(x, np.full_like(x, x.mean())) == pytest.approx(0.0)
    assert r_squared(x, -x) == pytest.approx(-3.0)
    with pytest.raises(ValueError):
        r_squared(np.ones(5), np.ones(5))


def test_input_factor_correlation_examples(rng):
    X = rng.normal(size=(10_000, 3))
    Z = np.c_[X[:, 0], -X[:, 1], rng.normal(size=10_000)]
    C = input_factor_correlation(X, Z)
    assert C[0, 0] == pytest.approx(1.0) and C[1, 1] == pytest.approx(-1.0)
    assert abs(C[2, 2]) < 0.05


def _small_factor_cfg():
    return FactorConfig(p=3, n_seeds=1, train=TrainConfig(epochs=5, patience=2, eta=0.01))


def test_equal_strategy_backtest():
    panel, _ = planted_block_panel(d=6, T=400, k=3, seed=1)
    run = run_backtest(panel, ["equal"], BacktestConfig(), panel.dates[300])
    rep = run.reports["equal"]
    assert rep.metrics["TTO"] == 0.0
    assert rep.metrics["SSPW"] == pytest.approx(1 / 6)
    assert (rep.leverage <= 3.0).all()
    assert rep.weights.index[0] == run.rebalance_dates[0]
    assert rep.returns.index[0] == run.rebalance_dates[0]


def test_factor_strategies_share_schedule():
    panel, _ = planted_block_panel(d=6, T=380, k=3, seed=2)
    cfg = BacktestConfig(estimation_window=200)
    run = run_backtest(panel, ["aerp", "nmfrp"], cfg, panel.dates[300], factor_cfg=_small_factor_cfg(), seed=5)
    a, b = run.reports["aerp"], run.reports["nmfrp"]
    assert (a.weights.index == b.weights.index).all()
    assert len(run.fits) == len(run.rebalance_dates)
    again = run_backtest(panel, ["aerp"], cfg, panel.dates[300], factor_cfg=_small_factor_cfg(), seed=5)
    pd.testing.assert_series_equal(again.reports["aerp"].returns, a.returns)
    assert set(run.diagnostics) == {"ae", "nmf"}
    assert run.diagnostics["ae"].factor_corr.shape == (6, 3)


def test_short_history_rejected():
    panel, _ = planted_block_panel(d=4, T=200, k=2)
    with pytest.raises(ValueError, match="estimation window"):
        run_backtest(panel, ["equal"], BacktestConfig(), panel.dates[100])
