"""Single-hidden-layer ReLU autoencoder with non-negative unit-norm weights.

    x_hat = W relu(H^T x + b_E) + b_D

Training minimizes the reconstruction error plus an L1 penalty on both
weight matrices, a soft-orthogonality penalty ||W^T W - I||_F and the sum
of squared off-diagonal entries of the covariance of the batch-normalized
factors. After each Adam step negative weights are clipped and columns
rescaled to unit norm. Gradients are computed by hand (numpy only).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .data import bootstrap_indices
from .nmf import ConvexNmfModel, _read_matrices, _write_rows, fit_convex_nmf

logger = logging.getLogger(__name__)

PARAMS = ("H", "b_E", "W", "b_D")


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class AutoencoderModel:
    H: np.ndarray  # d x p encoder weights
    b_E: np.ndarray  # p
    W: np.ndarray  # d x p decoder weights
    b_D: np.ndarray  # d
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.W.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1e-3
    lambda2: float = 1e-2
    lambda3: float = 1e-2
    eta: float = 1e-3
    epochs: int = 1000
    batch_size: int = 32
    patience: int = 100
    n_seeds: int = 15
    block_length: int = 60
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_eps: float = 1e-3
    bn_momentum: float = 0.9

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("eta", "epochs", "batch_size", "n_seeds", "block_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.patience <= self.epochs:
            raise ValueError("patience must lie in [0, epochs]")


@dataclass
class TrainReport:
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, len(self.val_loss) + 1),
                "train_loss": self.train_loss,
                "val_loss": self.val_loss,
                "rmse": self.val_rmse,
            }
        )

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def _check_dim(model, x, axis_len, what):
    if x.shape[-1] != axis_len:
        raise ValueError(f"{what} has dimension {x.shape[-1]}, model expects {axis_len}")


def linear_activation(model: AutoencoderModel, x) -> np.ndarray:
    """Pre-ReLU encoder output H^T x + b_E (rows of ``x`` are observations)."""
    x = np.asarray(x, dtype=float)
    _check_dim(model, x, model.d, "input")
    return x @ model.H + model.b_E


def encode(model: AutoencoderModel, x) -> np.ndarray:
    return np.maximum(linear_activation(model, x), 0.0)


def decode(model: AutoencoderModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    _check_dim(model, z, model.p, "factor vector")
    return z @ model.W.T + model.b_D


def reconstruct(model: AutoencoderModel, x) -> np.ndarray:
    return decode(model, encode(model, x))


def penalized_loss(model: AutoencoderModel, batch, cfg: TrainConfig, with_grad: bool = True):
    """Penalized loss on a B x d batch and its gradient w.r.t. H, b_E, W, b_D.

    Returns ``(loss, grads, parts)`` where ``parts`` holds the individual
    terms. The reconstruction term is the batch mean of ||x - x_hat||^2.
    """
    X = np.asarray(batch, dtype=float)
    B = X.shape[0]
    if B < 2:
        raise ValueError("batch needs at least 2 rows for the factor covariance")
    _check_dim(model, X, model.d, "batch")
    H, b_E, W, b_D = model.H, model.b_E, model.W, model.b_D
    p = W.shape[1]

    U = X @ H + b_E
    active = U > 0
    Z = np.where(active, U, 0.0)
    R = Z @ W.T + b_D - X
    mse = np.einsum("ij,ij->", R, R) / B

    l1 = cfg.lambda1 * (np.abs(H).sum() + np.abs(W).sum())

    M = W.T @ W - np.eye(p)
    fro = np.sqrt(np.einsum("ij,ij->", M, M))
    ortho = cfg.lambda2 * fro

    Zc = Z - Z.mean(axis=0)
    cov = Zc.T @ Zc / (B - 1)
    s = np.sqrt(np.diag(cov) + cfg.bn_eps)
    C = cov / np.outer(s, s)
    off = C - np.diag(np.diag(C))
    decor = cfg.lambda3 * np.einsum("ij,ij->", off, off)

    loss = mse + l1 + ortho + decor
    parts = {"mse": mse, "l1": l1, "ortho": ortho, "decor": decor}
    if not with_grad:
        return loss, None, parts

    dXh = 2.0 * R / B
    gW = dXh.T @ Z
    gbD = dXh.sum(axis=0)
    dZ = dXh @ W

    if cfg.lambda3:
        gC = 2.0 * cfg.lambda3 * off
        gcov = gC / np.outer(s, s)
        gs = -2.0 * (gC * C).sum(axis=1) / s
        gcov = gcov + np.diag(gs / (2.0 * s))
        dZc = Zc @ (gcov + gcov.T) / (B - 1)
        dZ = dZ + dZc - dZc.mean(axis=0)

    dU = np.where(active, dZ, 0.0)
    gH = X.T @ dU + cfg.lambda1 * np.sign(H)
    gbE = dU.sum(axis=0)
    gW = gW + cfg.lambda1 * np.sign(W)
    if cfg.lambda2 and fro > 0:
        gW = gW + cfg.lambda2 * 2.0 * W @ M / fro
    return loss, {"H": gH, "b_E": gbE, "W": gW, "b_D": gbD}, parts


def _project_matrix(M, fallback, name):
    M = np.maximum(M, 0.0)
    norms = np.linalg.norm(M, axis=0)
    dead = np.flatnonzero(~(norms > 0))
    if dead.size:
        for k in dead:
            logger.warning("%s column %d collapsed to zero; reinitialized from warm start", name, k)
            col = np.maximum(fallback[:, k], 0.0) if fallback is not None else np.ones(M.shape[0])
            if not np.linalg.norm(col) > 0:
                col = np.ones(M.shape[0])
            M[:, k] = col
        norms = np.linalg.norm(M, axis=0)
    return M / norms


def project_constraints(model: AutoencoderModel, fallback: ConvexNmfModel | None = None) -> AutoencoderModel:
    """Clip H, W at zero and rescale each column to unit Euclidean norm."""
    fb_H = fallback.H if fallback is not None else None
    fb_W = fallback.W if fallback is not None else None
    return replace(
        model,
        H=_project_matrix(np.array(model.H, dtype=float), fb_H, "H"),
        W=_project_matrix(np.array(model.W, dtype=float), fb_W, "W"),
    )


def init_from_nmf(warm_start: ConvexNmfModel) -> AutoencoderModel:
    d, p = warm_start.W.shape
    model = AutoencoderModel(
        H=np.array(warm_start.H, float), b_E=np.zeros(p), W=np.array(warm_start.W, float), b_D=np.zeros(d),
        bn_mean=np.zeros(p), bn_var=np.ones(p),
    )
    return project_constraints(model, warm_start)


class _Adam:
    def __init__(self, cfg: TrainConfig, params):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        out = {}
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            out[k] = params[k] - c.eta * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)
        return out


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    cuts = list(range(0, n, batch_size))
    chunks = [perm[i : i + batch_size] for i in cuts]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _rmse(model, X):
    R = reconstruct(model, X) - X
    return float(np.sqrt(np.mean(R**2)))


def train(
    X_train, X_val, cfg: TrainConfig, warm_start: ConvexNmfModel, seed: int = 0
) -> tuple[AutoencoderModel, TrainReport]:
    """Train on fresh block-bootstrap resamples of ``X_train`` each epoch.

    Both inputs are already-normalized T x d arrays. Early stopping monitors
    the penalized loss on the untouched ``X_val`` and restores the best
    epoch's parameters.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    if warm_start.d != X_train.shape[1]:
        raise ValueError(f"warm start has d={warm_start.d}, data has d={X_train.shape[1]}")
    rng = np.random.default_rng(seed)
    model = init_from_nmf(warm_start)
    adam = _Adam(cfg, model.params())
    report = TrainReport(seed=seed)
    T = X_train.shape[0]
    block = min(cfg.block_length, T)

    best_val, best_model, wait = np.inf, model, 0
    for epoch in range(1, cfg.epochs + 1):
        Xb = X_train[bootstrap_indices(T, block, rng)]
        losses = []
        for idx in _batches(T, cfg.batch_size, rng):
            batch = Xb[idx]
            loss, grads, _ = penalized_loss(model, batch, cfg)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"seed {seed}: non-finite loss at epoch {epoch}")
            losses.append(loss)
            model = replace(model, **adam.step(model.params(), grads))
            model = project_constraints(model, warm_start)
            Z = encode(model, batch)
            mom = cfg.bn_momentum
            model = replace(
                model,
                bn_mean=mom * model.bn_mean + (1 - mom) * Z.mean(axis=0),
                bn_var=mom * model.bn_var + (1 - mom) * Z.var(axis=0, ddof=1),
            )

        val_loss = penalized_loss(model, X_val, cfg, with_grad=False)[0]
        if not np.isfinite(val_loss):
            raise TrainingDivergence(f"seed {seed}: non-finite validation loss at epoch {epoch}")
        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(float(val_loss))
        report.train_rmse.append(_rmse(model, X_train))
        report.val_rmse.append(_rmse(model, X_val))
        report.stopping_epoch = epoch

        if val_loss < best_val:
            best_val, best_model, wait = val_loss, model, 0
            report.best_epoch = epoch
        else:
            wait += 1
            if wait >= max(cfg.patience, 1):
                break
    return best_model, report


def train_ensemble(X_train, X_val, cfg: TrainConfig, p: int | None = None, n_seeds: int | None = None,
                   warm_starts=None, seed: int = 0):
    """Train ``n_seeds`` members with seeds ``seed, seed+1, ...``.

    Each member gets its own convex-NMF warm start (seeded k-means
    initialization on ``X_train``) unless ``warm_starts`` supplies one per
    member. Returns ``(models, reports)``.
    """
    n = cfg.n_seeds if n_seeds is None else n_seeds
    if n < 1:
        raise ValueError("n_seeds must be at least 1")
    if warm_starts is None:
        if p is None:
            raise ValueError("either p or warm_starts is required")
        warm_starts = [fit_warm_start(X_train, p, seed=seed + i) for i in range(n)]
    elif len(warm_starts) != n:
        raise ValueError(f"{len(warm_starts)} warm starts for {n} members")
    models, reports = [], []
    for i, ws in enumerate(warm_starts):
        s = seed + i
        try:
            m, r = train(X_train, X_val, cfg, ws, seed=s)
        except TrainingDivergence as exc:
            raise TrainingDivergence(f"ensemble member seed {s}: {exc}") from exc
        models.append(m)
        reports.append(r)
    return models, reports


def fit_warm_start(X_train, p: int, seed: int = 0, max_iter: int = 500, tol: float = 1e-6) -> ConvexNmfModel:
    return fit_convex_nmf(X_train, p, max_iter=max_iter, tol=tol, seed=seed)


def save_model(model: AutoencoderModel, path) -> None:
    """Same layout as the convex-NMF dump, followed by b_E, b_D and the
    batch-norm running mean and variance (one line each)."""
    p = model.p
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{model.d} {p}\n")
        _write_rows(fh, model.W)
        _write_rows(fh, model.H)
        _write_rows(fh, model.b_E)
        _write_rows(fh, model.b_D)
        _write_rows(fh, model.bn_mean if model.bn_mean is not None else np.zeros(p))
        _write_rows(fh, model.bn_var if model.bn_var is not None else np.ones(p))


def load_model(path) -> AutoencoderModel:
    d, p, rows = _read_matrices(path)
    if len(rows) != 2 * d + 4:
        raise ValueError(f"{path}: expected {2 * d + 4} data lines")
    W = np.array(rows[:d], float)
    H = np.array(rows[d : 2 * d], float)
    b_E, b_D, bn_mean, bn_var = (np.array(r, float) for r in rows[2 * d :])
    return AutoencoderModel(H, b_E, W, b_D, bn_mean, bn_var)
