"""Long-only allocation rules.

Factor-based rules (cluster from the loading matrix, then combine an
intra-cluster rule with inverse-variance cluster weights) and the
model-free benchmarks: inverse variance, risk budgeting / ERC, HRP, an
HCAA-style dendrogram split, k-means allocation, long-only minimum
variance and equal / equal-per-class weights.

All functions return a d-vector of nonnegative weights summing to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import linkage, to_tree
from scipy.spatial.distance import squareform

from .clustering import ClusterAssignment, kmeans

BUDGET_FLOOR = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AllocationWeights:
    """Rebalance record: pre-leverage weights and the leverage scalar applied."""

    date: pd.Timestamp
    strategy: str
    weights: np.ndarray
    leverage: float = 1.0


def _normalize(a) -> np.ndarray:
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    total = a.sum()
    if not total > 0:
        raise ValueError("weights sum to zero")
    return a / total


def estimate_covariance(returns, min_rows: int = 2) -> np.ndarray:
    """Sample covariance (ddof 1) of a T x d return window."""
    x = np.asarray(returns, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < max(min_rows, 2):
        raise ValueError(f"covariance window has {x.shape[0]} rows, need {max(min_rows, 2)}")
    return np.atleast_2d(np.cov(x, rowvar=False, ddof=1))


def cov_to_corr(cov) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def inverse_variance_weights(cov) -> np.ndarray:
    diag = np.diag(np.atleast_2d(cov)).astype(float)
    if not (diag > 0).all():
        raise ValueError("inverse-variance weights need a strictly positive diagonal")
    return _normalize(1.0 / diag)


def portfolio_variance(a, cov) -> float:
    a = np.asarray(a, float)
    return float(a @ cov @ a)


def risk_contributions(a, cov) -> np.ndarray:
    """Relative risk contributions a_i (Sigma a)_i / a^T Sigma a."""
    a = np.asarray(a, dtype=float)
    m = np.asarray(cov) @ a
    var = float(a @ m)
    if not var > 0:
        raise ValueError("portfolio variance is zero")
    return a * m / var


def _rb_newton(cov, b, tol, max_iter):
    # min 1/2 y'Sy - sum b log y; stationarity S y = b / y gives RRC = b after scaling
    y = b / np.sqrt(np.diag(cov))
    y /= np.sqrt(y @ cov @ y)
    for _ in range(max_iter):
        g = cov @ y - b / y
        Hs = cov + np.diag(b / y**2)
        step = np.linalg.solve(Hs, g)
        t = 1.0
        f0 = 0.5 * y @ cov @ y - b @ np.log(y)
        while True:
            y_new = y - t * step
            if (y_new > 0).all():
                f1 = 0.5 * y_new @ cov @ y_new - b @ np.log(y_new)
                if f1 <= f0 - 1e-4 * t * (g @ step) or t < 1e-12:
                    break
            t *= 0.5
        y = y_new
        a = y / y.sum()
        if np.max(np.abs(risk_contributions(a, cov) - b)) <= tol:
            return a
    return None


def _rb_ccd(cov, b, tol, max_iter):
    # cyclical coordinate descent on the same objective
    y = b / np.sqrt(np.diag(cov))
    diag = np.diag(cov)
    for _ in range(max_iter):
        for i in range(b.size):
            c = cov[i] @ y - diag[i] * y[i]
            y[i] = (-c + np.sqrt(c * c + 4.0 * diag[i] * b[i])) / (2.0 * diag[i])
        a = y / y.sum()
        if np.max(np.abs(risk_contributions(a, cov) - b)) <= tol:
            return a
    return None


def risk_budgeting_weights(cov, budget=None, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Long-only weights whose relative risk contributions equal ``budget``.

    Equal budgets (the default) give the ERC portfolio. Assets with a zero
    budget receive zero weight; the problem is solved on the support.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    b = np.full(d, 1.0 / d) if budget is None else np.asarray(budget, dtype=float)
    if b.shape != (d,) or (b < 0).any() or not np.isclose(b.sum(), 1.0, atol=1e-9):
        raise ValueError("budget must be a nonnegative vector summing to one")
    support = np.flatnonzero(b > 0)
    a = np.zeros(d)
    if support.size == 1:
        a[support] = 1.0
        return a
    sub = cov[np.ix_(support, support)]
    bs = b[support] / b[support].sum()
    sol = _rb_newton(sub, bs, tol, min(max_iter, 200))
    if sol is None:
        sol = _rb_ccd(sub, bs, tol, max_iter)
    if sol is None:
        w = np.full(bs.size, 1.0 / bs.size)
        raise SolverError(f"risk budgeting did not converge; residual {np.max(np.abs(risk_contributions(w, sub) - bs)):.3g}")
    a[support] = sol
    return a


def _tree(corr, method="single"):
    corr = np.asarray(corr, dtype=float)
    dist = np.sqrt(np.clip((1.0 - corr) / 2.0, 0.0, None))
    np.fill_diagonal(dist, 0.0)
    dist = (dist + dist.T) / 2.0
    return to_tree(linkage(squareform(dist, checks=False), method=method))


def _check_corr(corr):
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or not np.allclose(corr, corr.T, atol=1e-10):
        raise ValueError("correlation matrix must be square and symmetric")
    if np.linalg.eigvalsh(corr).min() < -1e-8:
        raise ValueError("correlation matrix is not positive semidefinite")
    return corr


def _cluster_variance(cov, idx):
    sub = cov[np.ix_(idx, idx)]
    w = inverse_variance_weights(sub)
    return float(w @ sub @ w)


def _leaf_order(node, cov):
    # canonical child order (smaller subtree first, then lower cluster
    # variance) so the ordering does not depend on the input asset order
    if node.is_leaf():
        return [node.id]
    kids = [_leaf_order(node.get_left(), cov), _leaf_order(node.get_right(), cov)]
    kids.sort(key=lambda leaves: (len(leaves), _cluster_variance(cov, leaves), min(np.diag(cov)[leaves])))
    return kids[0] + kids[1]


def quasi_diag_order(cov, corr, method: str = "single") -> list[int]:
    return _leaf_order(_tree(corr, method), np.asarray(cov, float))


def hrp_weights(cov, corr=None, method: str = "single") -> np.ndarray:
    """Hierarchical risk parity: correlation-distance tree, quasi-diagonal
    ordering, then inverse-variance recursive bisection."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    corr = _check_corr(cov_to_corr(cov) if corr is None else corr)
    d = cov.shape[0]
    if d == 1:
        return np.ones(1)
    order = quasi_diag_order(cov, corr, method)
    w = np.ones(d)
    segments = [order]
    while segments:
        nxt = []
        for seg in segments:
            if len(seg) < 2:
                continue
            half = len(seg) // 2
            left, right = seg[:half], seg[half:]
            v_l, v_r = _cluster_variance(cov, left), _cluster_variance(cov, right)
            alpha = 1.0 - v_l / (v_l + v_r)
            w[left] *= alpha
            w[right] *= 1.0 - alpha
            nxt += [left, right]
        segments = nxt
    return _normalize(w)


def hcaa_weights(corr, method: str = "single") -> np.ndarray:
    """Equal split of capital at every dendrogram node down to the leaves."""
    corr = _check_corr(corr)
    d = corr.shape[0]
    if d == 1:
        return np.ones(1)
    w = np.zeros(d)

    def split(node, mass):
        if node.is_leaf():
            w[node.id] = mass
            return
        split(node.get_left(), mass / 2.0)
        split(node.get_right(), mass / 2.0)

    split(_tree(corr, method), 1.0)
    return w


def factor_cluster_weights(cov, assignment: ClusterAssignment) -> np.ndarray:
    """Inverse-variance weights across clusters; each cluster's variance is
    that of its own intra-cluster inverse-variance portfolio. Empty clusters
    get weight zero."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    inv = np.zeros(assignment.p)
    for k in range(assignment.p):
        idx = assignment.members(k)
        if idx.size:
            inv[k] = 1.0 / _cluster_variance(cov, idx)
    if not inv.sum() > 0:
        raise ValueError("all assets are unassigned")
    return inv / inv.sum()


def _combine(cov, assignment, intra):
    c = factor_cluster_weights(cov, assignment)
    a = np.zeros(assignment.d)
    for k in range(assignment.p):
        idx = assignment.members(k)
        if idx.size:
            a[idx] = intra(k, idx) * c[k]
    return _normalize(a)


def aerp_weights(cov, assignment: ClusterAssignment) -> np.ndarray:
    """Intra-cluster inverse variance scaled by cluster weight (AERP / NMFRP)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return _combine(cov, assignment, lambda k, idx: inverse_variance_weights(cov[np.ix_(idx, idx)]))


def loading_budget(W, idx, k) -> np.ndarray:
    """Risk budget w_ik^2 / sum_j w_jk^2 over cluster members (floored)."""
    sq = np.asarray(W, float)[idx, k] ** 2
    if not sq.sum() > 0:
        sq = np.ones(idx.size)
    b = np.maximum(sq / sq.sum(), BUDGET_FLOOR)
    return b / b.sum()


def aercw_weights(cov, assignment: ClusterAssignment, W) -> np.ndarray:
    """Intra-cluster risk budgeting with squared-loading budgets (AERCW / NMFRCW)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return _combine(
        cov, assignment, lambda k, idx: risk_budgeting_weights(cov[np.ix_(idx, idx)], loading_budget(W, idx, k))
    )


def aeaa_weights(assignment: ClusterAssignment) -> np.ndarray:
    """Equal weight per non-empty cluster, equal weight within (AEAA / NMFAA)."""
    clusters = assignment.clusters()
    if not clusters:
        raise ValueError("all assets are unassigned")
    a = np.zeros(assignment.d)
    for idx in clusters:
        a[idx] = 1.0 / (len(clusters) * idx.size)
    return a


def kmaa_weights(returns, p: int, seed: int = 0) -> np.ndarray:
    return aeaa_weights(kmeans(returns, p, seed))


def markowitz_weights(cov, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Long-only minimum variance: min a'Sa s.t. sum a = 1, a >= 0 (primal active set)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    free = np.ones(d, dtype=bool)

    def solve_free(mask):
        # equality-constrained minimizer on the free set via the bordered KKT system
        idx = np.flatnonzero(mask)
        n = idx.size
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = 2.0 * cov[np.ix_(idx, idx)]
        kkt[:n, n] = kkt[n, :n] = 1.0
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        x = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:n]
        out = np.zeros(d)
        out[idx] = x / x.sum()
        return out

    a = np.full(d, 1.0 / d)
    for _ in range(max_iter):
        target = solve_free(free)
        step = target - a
        blocking = free & (step < -1e-15)
        if blocking.any():
            ratios = -a[blocking] / step[blocking]
            t = min(1.0, ratios.min())
        else:
            t = 1.0
        a = a + t * step
        if t < 1.0:
            hit = np.flatnonzero(blocking)[np.argmin(ratios)]
            a[hit] = 0.0
            free[hit] = False
            continue
        a[~free] = 0.0
        g = 2.0 * cov @ a
        lam = g[free].mean()
        viol = (~free) & (g < lam - tol * max(1.0, abs(lam)))
        if not viol.any():
            return _normalize(a)
        free[np.flatnonzero(viol)[np.argmin(g[viol])]] = True
    raise SolverError("minimum-variance active set did not converge")


def equal_weights(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


def equal_class_weights(classes) -> np.ndarray:
    """1 / (n_classes * d_c) for an asset in a class of size d_c."""
    labels = np.asarray(classes, dtype=object)
    uniq, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return 1.0 / (uniq.size * counts[inv])
