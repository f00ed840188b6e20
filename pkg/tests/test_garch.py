import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from latentfolio.distributions import Innovation
from latentfolio.garch import (
    ArmaGarchModel,
    GarchGrid,
    SelectionTrace,
    fit_arma_garch,
    forecast_one_step,
    in_sample_forecasts,
    loglik_gradient,
    one_step_variance,
    residual_diagnostics,
    select_arma_garch,
    simulate,
)


def _model(P=0, Q=0, p=1, q=1, family="norm", mu=0.0, ar=(), ma=(), omega=0.1, alpha=(0.1,), beta=(0.8,), **kw):
    return ArmaGarchModel(P, Q, p, q, family, mu, np.array(ar, float), np.array(ma, float), omega,
                          np.array(alpha, float), np.array(beta, float), **kw)


laws = st.one_of(
    st.just(Innovation("norm")),
    st.builds(lambda xi: Innovation("snorm", xi), st.floats(0.3, 3.0)),
    st.builds(lambda nu: Innovation("std", shape=nu), st.floats(2.5, 60.0)),
    st.builds(lambda xi, nu: Innovation("sstd", xi, nu), st.floats(0.3, 3.0), st.floats(3.0, 60.0)),
)


@given(laws)
@settings(max_examples=30, deadline=None)
def test_innovations_are_standardized(law):
    lo, hi = -np.inf, np.inf
    mass = integrate.quad(law.pdf, lo, hi, limit=400)[0]
    mean = integrate.quad(lambda z: z * law.pdf(z), lo, hi, limit=400)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)
    assert mean == pytest.approx(0.0, abs=1e-6)
    if law.shape > 5:  # the variance integral converges slowly for heavy tails
        var = integrate.quad(lambda z: z * z * law.pdf(z), lo, hi, limit=400)[0]
        assert var == pytest.approx(1.0, abs=1e-4)


@given(laws, st.floats(-3.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_cdf_integrates_pdf(law, x):
    val = integrate.quad(law.pdf, -np.inf, x, limit=400)[0]
    assert float(law.cdf(x)) == pytest.approx(val, abs=1e-6)


def test_sampler_moments():
    law = Innovation("sstd", 0.77, 7.92)
    z = law.rvs(400_000, np.random.default_rng(0))
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.02
    assert np.mean(z <= 0.0) == pytest.approx(float(law.cdf(0.0)), abs=0.005)


def test_forecast_examples():
    m = _model(p=0, q=0, alpha=(), beta=(), mu=1.5)
    assert forecast_one_step(m, np.random.default_rng(0).normal(size=20))[0] == 1.5
    g = _model(omega=0.1, alpha=(0.2,), beta=(0.7,))
    assert one_step_variance(g, np.array([1.0]), np.array([1.0])) == pytest.approx(1.0)
    ar = _model(P=1, ar=(0.5,), p=0, q=0, alpha=(), beta=())
    assert forecast_one_step(ar, np.array([0.3, 2.0]))[0] == pytest.approx(1.0)


def test_in_sample_forecasts_are_causal(rng):
    m = _model(P=1, Q=1, ar=(0.3,), ma=(0.2,), mu=0.5)
    z = rng.normal(size=80)
    zh, sd = in_sample_forecasts(m, z, s2_0=1.0)
    zh2, sd2 = in_sample_forecasts(m, z[:50], s2_0=1.0)
    np.testing.assert_allclose(zh[:50], zh2, atol=1e-13)
    np.testing.assert_allclose(sd[:50], sd2, atol=1e-13)
    # a model forecast from the first t observations equals the t-th one-step value
    f = forecast_one_step(m, z[:50])
    zh_full, _ = in_sample_forecasts(m, z[:51], s2_0=np.var(z[:50], ddof=1))
    assert f[0] == pytest.approx(zh_full[50], abs=1e-12)


def test_white_noise_moments(rng):
    z = rng.normal(0.3, 2.0, 500)
    m = fit_arma_garch(z, (0, 0, 0, 0), "norm", window=None)
    assert m.mu == pytest.approx(z.mean(), abs=1e-5)
    assert m.omega == pytest.approx(z.var(), rel=1e-4)


def test_stationarity_constraint():
    true = _model(omega=0.01, alpha=(0.25,), beta=(0.7499,))
    z = simulate(true, 1500, seed=1)
    m = fit_arma_garch(z, (0, 0, 1, 1), "norm", window=None)
    assert m.persistence <= 1 - 1e-6 + 1e-12


@pytest.mark.parametrize("family", ["norm", "std"])
def test_parameter_recovery_and_first_order_condition(family):
    true = _model(Q=1, ma=(0.2,), mu=1.0, omega=0.1, alpha=(0.15,), beta=(0.75,), family=family,
                  shape=8.0 if family == "std" else np.inf)
    z = simulate(true, 4000, seed=2)
    m = fit_arma_garch(z, (0, 1, 1, 1), family, window=None)
    assert m.converged
    assert np.linalg.norm(loglik_gradient(m, z)) <= 1e-4
    np.testing.assert_allclose(m.ma, true.ma, atol=0.05)
    assert m.alpha[0] + m.beta[0] == pytest.approx(0.9, abs=0.05)


def test_rejects_unidentified_orders(rng):
    with pytest.raises(ValueError):
        fit_arma_garch(rng.normal(size=300), (0, 0, 0, 1))
    with pytest.raises(ValueError):
        fit_arma_garch(rng.normal(size=10), (0, 0, 1, 1))


def test_constant_variance_ar1_prefers_no_garch():
    true = _model(P=1, ar=(0.6,), p=0, q=0, alpha=(), beta=(), omega=1.0)
    wins = 0
    grid = GarchGrid(ar=(1,), ma=(0,), arch=(0, 1), garch=(0, 1), families=("norm",))
    for seed in range(5):
        m = select_arma_garch(simulate(true, 250, seed=seed), grid)
        wins += m.q == 0 and m.p == 0 or m.persistence < 0.2
    assert wins >= 4


def test_selection_prefers_fewer_parameters_on_ties(monkeypatch):
    import latentfolio.garch as g

    calls = []

    def fake(z, orders, fam, window):
        calls.append(orders)
        m = _model(*orders, alpha=(0.1,) * orders[2], beta=(0.8,) * orders[3], ar=(0.0,) * orders[0],
                   ma=(0.0,) * orders[1], n_obs=250)
        # identical AIC for every spec
        from dataclasses import replace

        return replace(m, loglik=float(m.n_params))

    monkeypatch.setattr(g, "fit_arma_garch", fake)
    best = g.select_arma_garch(np.zeros(250), GarchGrid(ar=(0, 1), ma=(0,), arch=(1,), garch=(0, 1), families=("norm",)))
    assert best.orders == (0, 0, 1, 0)
    assert len(calls) == 4


@pytest.mark.slow
def test_order_selection_simulation():
    # true spec ARMA(1,0)-GARCH(1,1); candidates differ in the ARMA part
    true = _model(P=1, ar=(0.5,), mu=1.0, omega=0.1, alpha=(0.15,), beta=(0.75,))
    grid = GarchGrid(ar=(0, 1), ma=(0, 1), arch=(1,), garch=(1,), families=("norm",))
    hits = 0
    n_seeds = 20
    for seed in range(n_seeds):
        m = select_arma_garch(simulate(true, 250, seed=100 + seed), grid)
        hits += m.orders == (1, 0, 1, 1)
    assert hits >= 0.6 * n_seeds


def test_trace_records_every_spec(rng):
    trace = SelectionTrace()
    grid = GarchGrid(ar=(0,), ma=(0,), arch=(0, 1), garch=(0, 1), families=("norm", "std"))
    select_arma_garch(rng.normal(size=260), grid, trace=trace)
    assert len(trace.aic) + len(trace.failures) == len(list(grid.specs())) == 6


def test_residual_diagnostics_keys(rng):
    z = rng.normal(size=300)
    m = fit_arma_garch(z, (0, 0, 1, 1))
    out = residual_diagnostics(m, z)
    assert set(out) == {"ljung_box", "ljung_box_p", "ljung_box_sq", "ljung_box_sq_p", "arch_lm", "arch_lm_p"}
    assert all(0 <= out[k] <= 1 for k in out if k.endswith("_p"))
