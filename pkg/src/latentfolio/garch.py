"""ARMA(P, Q)-GARCH(p, q) estimation by maximum likelihood, AIC order
selection and one-step forecasts.

Mean:      z_t - mu = sum_i a_i (z_{t-i} - mu) + sum_j b_j eps_{t-j} + eps_t
Variance:  s2_t = omega + sum_i alpha_i eps_{t-i}^2 + sum_j beta_j s2_{t-j}
with eps_t = s_t Z_t and Z_t a standardized innovation.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal

from .distributions import FAMILIES, Innovation

logger = logging.getLogger(__name__)

STATIONARITY_MARGIN = 1e-6
_BIG = 1e10


@dataclass(frozen=True)
class ArmaGarchModel:
    P: int
    Q: int
    p: int
    q: int
    family: str
    mu: float
    ar: np.ndarray
    ma: np.ndarray
    omega: float
    alpha: np.ndarray
    beta: np.ndarray
    skew: float = 1.0
    shape: float = np.inf
    loglik: float = np.nan
    n_obs: int = 0
    converged: bool = True

    @property
    def orders(self) -> tuple[int, int, int, int]:
        return self.P, self.Q, self.p, self.q

    @property
    def innovation(self) -> Innovation:
        return Innovation(self.family, self.skew, self.shape)

    @property
    def n_params(self) -> int:
        return 2 + self.P + self.Q + self.p + self.q + self.innovation.n_params

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    @property
    def persistence(self) -> float:
        return float(self.alpha.sum() + self.beta.sum())

    def vector(self) -> np.ndarray:
        return _pack(self)


def _spec_size(P, Q, p, q, family):
    return 2 + P + Q + p + q + (family in ("snorm", "sstd")) + (family in ("std", "sstd"))


def _unpack(theta, P, Q, p, q, family, **extra) -> ArmaGarchModel:
    theta = np.asarray(theta, dtype=float)
    i = 0

    def take(n):
        nonlocal i
        out = theta[i : i + n]
        i += n
        return out

    mu = float(take(1)[0])
    ar, ma = take(P), take(Q)
    omega = float(take(1)[0])
    alpha, beta = take(p), take(q)
    skew = float(take(1)[0]) if family in ("snorm", "sstd") else 1.0
    shape = float(take(1)[0]) if family in ("std", "sstd") else np.inf
    return ArmaGarchModel(P, Q, p, q, family, mu, ar, ma, omega, alpha, beta, skew, shape, **extra)


def _pack(m: ArmaGarchModel) -> np.ndarray:
    parts = [[m.mu], m.ar, m.ma, [m.omega], m.alpha, m.beta]
    if m.family in ("snorm", "sstd"):
        parts.append([m.skew])
    if m.family in ("std", "sstd"):
        parts.append([m.shape])
    return np.concatenate([np.asarray(x, float) for x in parts])


def arma_residuals(z, mu, ar, ma) -> np.ndarray:
    """Innovations of the ARMA mean with zero pre-sample values."""
    z = np.asarray(z, dtype=float)
    return signal.lfilter(np.r_[1.0, -np.asarray(ar)], np.r_[1.0, np.asarray(ma)], z - mu)


def garch_variance(eps, omega, alpha, beta, s2_0: float) -> np.ndarray:
    """Conditional variances; pre-sample eps^2 and s2 are set to ``s2_0``."""
    eps2 = np.asarray(eps, dtype=float) ** 2
    p, q = len(alpha), len(beta)
    x = np.full(eps2.size, float(omega))
    if p:
        padded = np.r_[np.full(p, s2_0), eps2]
        for i, a in enumerate(alpha, start=1):
            x += a * padded[p - i : p - i + eps2.size]
    if not q:
        return x
    den = np.r_[1.0, -np.asarray(beta)]
    zi = signal.lfiltic([1.0], den, y=np.full(q, s2_0))
    return signal.lfilter([1.0], den, x, zi=zi)[0]


def filter_series(model: ArmaGarchModel, z, s2_0: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(eps, s2) over ``z``; ``s2_0`` defaults to the sample variance of ``z``."""
    z = np.asarray(z, dtype=float)
    s2_0 = float(np.var(z, ddof=1)) if s2_0 is None else s2_0
    eps = arma_residuals(z, model.mu, model.ar, model.ma)
    return eps, garch_variance(eps, model.omega, model.alpha, model.beta, s2_0)


def loglikelihood(model: ArmaGarchModel, z, s2_0: float | None = None) -> float:
    eps, s2 = filter_series(model, z, s2_0)
    if not (np.isfinite(s2).all() and (s2 > 0).all() and np.isfinite(eps).all()):
        return -np.inf
    sd = np.sqrt(s2)
    return float(np.sum(model.innovation.logpdf(eps / sd) - np.log(sd)))


def _violation(m: ArmaGarchModel) -> float:
    v = max(0.0, -m.omega + 1e-12) + np.maximum(0.0, -m.alpha).sum() + np.maximum(0.0, -m.beta).sum()
    v += max(0.0, m.persistence - (1.0 - STATIONARITY_MARGIN))
    if m.family in ("snorm", "sstd"):
        v += max(0.0, 0.05 - m.skew) + max(0.0, m.skew - 20.0)
    if m.family in ("std", "sstd"):
        v += max(0.0, 2.01 - m.shape) + max(0.0, m.shape - 500.0)
    # invertible MA / stationary AR keep the filters bounded
    for poly in (np.r_[1.0, m.ma], np.r_[1.0, -m.ar]):
        if poly.size > 1:
            r = np.abs(np.roots(poly[::-1])) if poly[-1] != 0 else np.array([np.inf])
            v += np.maximum(0.0, 1.0 + 1e-4 - r).sum()
    return float(v)


def _objective(theta, orders, z, s2_0):
    m = _unpack(theta, *orders)
    v = _violation(m)
    if v > 0:
        return _BIG * (1.0 + v)
    ll = loglikelihood(m, z, s2_0)
    return -ll / z.size if np.isfinite(ll) else _BIG


def _start(z, P, Q, p, q, family) -> np.ndarray:
    var = float(np.var(z, ddof=1))
    alpha = np.full(p, 0.1 / max(p, 1)) if q else np.full(p, 0.2 / max(p, 1))
    beta = np.full(q, 0.8 / max(q, 1)) if p else np.zeros(q)
    omega = var * max(1.0 - alpha.sum() - beta.sum(), 0.05)
    parts = [[float(np.mean(z))], np.zeros(P), np.zeros(Q), [omega], alpha, beta]
    if family in ("snorm", "sstd"):
        parts.append([1.0])
    if family in ("std", "sstd"):
        parts.append([8.0])
    return np.concatenate([np.asarray(x, float) for x in parts])


def _bounds(P, Q, p, q, family, var):
    b = [(None, None)] + [(-0.9999, 0.9999)] * (P + Q) + [(1e-10 * var, 10.0 * var)] + [(0.0, 1.0)] * (p + q)
    if family in ("snorm", "sstd"):
        b.append((0.05, 20.0))
    if family in ("std", "sstd"):
        b.append((2.01, 500.0))
    return b


def fit_arma_garch(
    series,
    orders: tuple[int, int, int, int] = (0, 0, 1, 1),
    family: str = "norm",
    window: int | None = 250,
    start: np.ndarray | ArmaGarchModel | None = None,
    max_iter: int = 4000,
) -> ArmaGarchModel:
    """Maximum-likelihood fit on the last ``window`` observations.

    Nelder-Mead on a penalized objective, polished by SLSQP with the
    stationarity constraint sum(alpha) + sum(beta) <= 1 - 1e-6. A failed
    polish keeps the best point found and flags ``converged=False``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    P, Q, p, q = orders
    if min(orders) < 0:
        raise ValueError("orders must be nonnegative")
    if p == 0 and q > 0:
        raise ValueError("GARCH beta terms need at least one alpha term to be identified")
    z = np.asarray(series, dtype=float)
    z = z[-window:] if window else z
    if z.size < _spec_size(P, Q, p, q, family) + 10 or not np.isfinite(z).all():
        raise ValueError(f"need a finite series longer than {_spec_size(P, Q, p, q, family) + 10} points")
    var = float(np.var(z, ddof=1))
    if not var > 0:
        raise ValueError("constant series")
    orders = (P, Q, p, q, family)
    theta0 = _pack(start) if isinstance(start, ArmaGarchModel) else (_start(z, *orders) if start is None else start)
    f = lambda th: _objective(th, orders, z, var)  # noqa: E731

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        best = np.asarray(theta0, float)
        if start is None:
            nm = optimize.minimize(
                f, best, method="Nelder-Mead",
                options={"maxiter": max_iter, "maxfev": max_iter, "xatol": 1e-7, "fatol": 1e-10, "adaptive": True},
            )
            best = nm.x if nm.fun <= f(best) else best
        cons = [{"type": "ineq", "fun": lambda th: 1.0 - STATIONARITY_MARGIN - th[P + Q + 2 : P + Q + 2 + p + q].sum()}]
        pol = optimize.minimize(
            f, best, method="SLSQP", bounds=_bounds(*orders, var), constraints=cons,
            options={"maxiter": 500, "ftol": 1e-13},
        )
    converged = bool(pol.success) and pol.fun <= f(best) + 1e-12
    theta = pol.x if pol.fun <= f(best) else best
    if f(theta) >= _BIG:
        raise RuntimeError(f"no feasible parameters found for orders {orders}, family {family}")
    m = _unpack(theta, *orders, n_obs=z.size, converged=converged)
    m = replace(m, alpha=np.maximum(m.alpha, 0.0), beta=np.maximum(m.beta, 0.0))
    return replace(m, loglik=loglikelihood(m, z, var))


def loglik_gradient(model: ArmaGarchModel, series, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the mean log-likelihood at ``model``."""
    z = np.asarray(series, dtype=float)[-model.n_obs :] if model.n_obs else np.asarray(series, float)
    var = float(np.var(z, ddof=1))
    orders = (model.P, model.Q, model.p, model.q, model.family)
    theta = model.vector()
    g = np.empty_like(theta)
    for i in range(theta.size):
        step = h * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (loglikelihood(_unpack(up, *orders), z, var) - loglikelihood(_unpack(dn, *orders), z, var)) / (2 * step)
    return g / z.size


@dataclass(frozen=True)
class GarchGrid:
    ar: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    ma: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    arch: tuple[int, ...] = (0, 1, 2)
    garch: tuple[int, ...] = (0, 1, 2)
    families: tuple[str, ...] = FAMILIES

    def specs(self):
        for P, Q, p, q in itertools.product(self.ar, self.ma, self.arch, self.garch):
            if p == 0 and q > 0:
                continue
            for fam in self.families:
                yield (P, Q, p, q), fam


@dataclass
class SelectionTrace:
    aic: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def select_arma_garch(series, grid: GarchGrid = GarchGrid(), window: int = 250, trace: SelectionTrace | None = None) -> ArmaGarchModel:
    """Minimum-AIC fit over the grid; converged fits preferred, ties go to
    the fewest parameters."""
    z = np.asarray(series, dtype=float)
    if z.size < window:
        raise ValueError(f"need at least {window} observations, got {z.size}")
    fits = []
    for orders, fam in grid.specs():
        try:
            m = fit_arma_garch(z, orders, fam, window)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            if trace is not None:
                trace.failures[(orders, fam)] = str(exc)
            continue
        if trace is not None:
            trace.aic[(orders, fam)] = m.aic
        if np.isfinite(m.aic):
            fits.append(m)
    if not fits:
        raise RuntimeError("every ARMA-GARCH fit failed")
    pool = [m for m in fits if m.converged] or fits
    return min(pool, key=lambda m: (round(m.aic, 9), m.n_params))


def one_step_mean(model: ArmaGarchModel, z, eps) -> float:
    z, eps = np.asarray(z, float), np.asarray(eps, float)
    if z.size < model.P or eps.size < model.Q:
        raise ValueError("history shorter than the ARMA lags")
    out = model.mu
    for i, a in enumerate(model.ar, start=1):
        out += a * (z[-i] - model.mu)
    for j, b in enumerate(model.ma, start=1):
        out += b * eps[-j]
    return float(out)


def one_step_variance(model: ArmaGarchModel, eps, s2) -> float:
    eps, s2 = np.asarray(eps, float), np.asarray(s2, float)
    if eps.size < model.p or s2.size < model.q:
        raise ValueError("history shorter than the GARCH lags")
    out = model.omega
    for i, a in enumerate(model.alpha, start=1):
        out += a * eps[-i] ** 2
    for j, b in enumerate(model.beta, start=1):
        out += b * s2[-j]
    return float(out)


def forecast_one_step(model: ArmaGarchModel, history) -> tuple[float, float]:
    """(z_hat, sigma_hat) for the observation following ``history``."""
    z = np.asarray(history, dtype=float)
    if z.size < max(model.P, model.Q, model.p, model.q, 2):
        raise ValueError("history shorter than the model lags")
    eps, s2 = filter_series(model, z)
    return one_step_mean(model, z, eps), float(np.sqrt(one_step_variance(model, eps, s2)))


def in_sample_forecasts(model: ArmaGarchModel, z, s2_0: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-step predictions (z_hat_t, sigma_t) for every t of ``z``, each
    using only observations before t."""
    z = np.asarray(z, dtype=float)
    eps, s2 = filter_series(model, z, s2_0)
    return z - eps, np.sqrt(s2)


def simulate(model: ArmaGarchModel, n: int, seed: int = 0, burn: int = 500) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Z = model.innovation.rvs(n + burn, rng)
    P, Q, p, q = model.orders
    lag = max(P, Q, p, q, 1)
    z = np.full(n + burn + lag, model.mu)
    eps = np.zeros_like(z)
    uncond = model.omega / max(1.0 - model.persistence, 1e-6)
    s2 = np.full_like(z, uncond)
    e2 = np.full_like(z, uncond)
    for t in range(lag, z.size):
        s2[t] = model.omega + sum(model.alpha[i] * e2[t - 1 - i] for i in range(p)) + sum(
            model.beta[j] * s2[t - 1 - j] for j in range(q)
        )
        eps[t] = np.sqrt(s2[t]) * Z[t - lag]
        e2[t] = eps[t] ** 2
        z[t] = (
            model.mu
            + sum(model.ar[i] * (z[t - 1 - i] - model.mu) for i in range(P))
            + sum(model.ma[j] * eps[t - 1 - j] for j in range(Q))
            + eps[t]
        )
    return z[lag + burn :]


def residual_diagnostics(model: ArmaGarchModel, z, lags: int = 10) -> dict:
    """Ljung-Box test on standardized residuals and their squares, and Engle's
    ARCH LM test; statistics with p-values."""
    from statsmodels.stats.diagnostic import acorr_ljungbox, het_arch

    eps, s2 = filter_series(model, np.asarray(z, float)[-model.n_obs :] if model.n_obs else z)
    std = eps / np.sqrt(s2)
    lb = acorr_ljungbox(std, lags=[lags])
    lb2 = acorr_ljungbox(std**2, lags=[lags])
    lm, lm_p, _, _ = het_arch(std, nlags=lags)
    return {
        "ljung_box": float(lb["lb_stat"].iloc[0]),
        "ljung_box_p": float(lb["lb_pvalue"].iloc[0]),
        "ljung_box_sq": float(lb2["lb_stat"].iloc[0]),
        "ljung_box_sq_p": float(lb2["lb_pvalue"].iloc[0]),
        "arch_lm": float(lm),
        "arch_lm_p": float(lm_p),
    }
