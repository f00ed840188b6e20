"""Convex non-negative matrix factorization X ~ X H W^T with H, W >= 0.

Multiplicative updates of Ding, Li & Jordan (2010) on the Gram matrix
Y = X^T X split into positive and negative parts; the columns of X are the
assets, so each factor X h_k is a long-only combination of asset returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import kmeans_labels

EPS = 1e-10


@dataclass(frozen=True)
class ConvexNmfModel:
    W: np.ndarray  # d x p loadings
    H: np.ndarray  # d x p mixing weights, factors Z = X H
    final_objective: float = np.nan
    objective_history: tuple[float, ...] = field(default=(), repr=False)
    n_iter: int = 0

    @property
    def p(self) -> int:
        return self.W.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[0]

    def factors(self, X) -> np.ndarray:
        return np.asarray(X, float) @ self.H


def objective(X, H, W) -> float:
    R = X - X @ H @ W.T
    return float(np.einsum("ij,ij->", R, R))


def _gram_objective(Y, H, W) -> float:
    # ||X - XHW^T||^2 = tr(Y) - 2 tr(W^T Y H) + tr(H^T Y H W^T W)
    YH = Y @ H
    return float(np.trace(Y) - 2.0 * np.einsum("ij,ij->", W, YH) + np.einsum("ij,ij->", H.T @ YH, W.T @ W))


def kmeans_init(X, p: int, seed: int = 0, smoothing: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-indicator warm start: W = I + s, H = (I + s) diag(n_k)^-1."""
    labels = kmeans_labels(np.asarray(X, float).T, p, seed)
    d = labels.size
    ind = np.zeros((d, p))
    ind[np.arange(d), labels] = 1.0
    sizes = np.maximum(ind.sum(axis=0), 1.0)
    W0 = ind + smoothing
    H0 = (ind + smoothing) / sizes
    return H0, W0


def fit_convex_nmf(X, p: int, max_iter: int = 500, tol: float = 1e-6, seed: int = 0, init=None) -> ConvexNmfModel:
    """Fit convex NMF by multiplicative updates.

    Stops after ``max_iter`` sweeps or once the relative objective decrease
    falls below ``tol``. ``init`` optionally supplies (H0, W0).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a T x d matrix")
    d = X.shape[1]
    if not 1 <= p <= d:
        raise ValueError(f"p={p} must lie in [1, d={d}]")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")

    H, W = (np.array(m, dtype=float) for m in init) if init is not None else kmeans_init(X, p, seed)
    Y = X.T @ X
    Yp = (np.abs(Y) + Y) / 2.0
    Ym = (np.abs(Y) - Y) / 2.0

    history = [_gram_objective(Y, H, W)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        YpH, YmH = Yp @ H, Ym @ H
        HtYpH, HtYmH = H.T @ YpH, H.T @ YmH
        W = W * np.sqrt((YpH + W @ HtYmH) / (YmH + W @ HtYpH + EPS))

        WtW = W.T @ W
        H = H * np.sqrt((Yp @ W + Ym @ H @ WtW) / (Ym @ W + Yp @ H @ WtW + EPS))

        history.append(_gram_objective(Y, H, W))
        prev, cur = history[-2], history[-1]
        if abs(prev) > 0 and (prev - cur) / abs(prev) < tol:
            break
    return ConvexNmfModel(W, H, objective(X, H, W), tuple(history), n_iter)


def reconstruct(model: ConvexNmfModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"X must have {model.d} columns")
    return (X @ model.H) @ model.W.T


def rmse(X, Xhat) -> float:
    """Root of the mean squared entry-wise residual."""
    R = np.asarray(X, float) - np.asarray(Xhat, float)
    return float(np.sqrt(np.mean(R**2)))


def unit_normalize_loadings(model: ConvexNmfModel) -> ConvexNmfModel:
    """Rescale W columns to unit norm; H is scaled inversely so X H W^T is unchanged."""
    norms = np.linalg.norm(model.W, axis=0)
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise ValueError(f"factor {int(bad[0])} has an all-zero loading column")
    return replace(model, W=model.W / norms, H=model.H * norms)


def _write_rows(fh, M):
    for row in np.atleast_2d(M):
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_model(model: ConvexNmfModel, path) -> None:
    """Text dump: a ``d p`` header, then the d rows of W, then the d rows of H."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{model.d} {model.p}\n")
        _write_rows(fh, model.W)
        _write_rows(fh, model.H)


def _read_matrices(path):
    rows = [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    d, p = int(rows[0][0]), int(rows[0][1])
    return d, p, rows[1:]


def load_model(path) -> ConvexNmfModel:
    d, p, rows = _read_matrices(path)
    M = np.array(rows[: 2 * d], dtype=float)
    if M.shape != (2 * d, p):
        raise ValueError(f"{path}: expected {2 * d} rows of {p} values")
    return ConvexNmfModel(M[:d], M[d:])
