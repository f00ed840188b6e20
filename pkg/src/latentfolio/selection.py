"""Model selection by validation RMSE under a clustering-stability floor."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .autoencoder import TrainConfig, train
from .autoencoder import reconstruct as ae_reconstruct
from .clustering import adjusted_rand_index, assign_clusters, consensus_matrix
from .data import ReturnsPanel, SplitPlan, bootstrap_indices, fit_normalizer
from .nmf import fit_convex_nmf, rmse, unit_normalize_loadings
from .nmf import reconstruct as nmf_reconstruct

logger = logging.getLogger(__name__)

NO_ADMISSIBLE = "no admissible candidate"


@dataclass(frozen=True)
class SelectionConfig:
    candidate_ps: tuple[int, ...] = (2, 3, 4, 5, 6)
    n_runs: int = 30
    ari_floor: float = 0.95
    block_length: int = 60
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-6
    # autoencoder grid: each entry overrides TrainConfig fields
    ae_grid: tuple[dict, ...] = ()
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.candidate_ps:
            raise ValueError("candidate_ps must be non-empty")
        if self.n_runs < 2:
            raise ValueError("n_runs must be at least 2 to score stability")


@dataclass
class CandidateResult:
    family: str
    p: int
    params: dict
    rmse: list[float]  # mean RMSE per validation window
    ari: list[float]  # mean ARI vs the window's reference run
    consensus: np.ndarray

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def mean_ari(self) -> float:
        return float(np.mean(self.ari))


@dataclass
class SelectionReport:
    candidates: list[CandidateResult]
    status: str
    chosen_p: int | None = None
    chosen_params: dict = field(default_factory=dict)
    ari_floor: float = 0.95

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.candidates:
            rows.append(
                {
                    "family": c.family,
                    "p": c.p,
                    **{k: c.params.get(k) for k in sorted({k for cc in self.candidates for k in cc.params})},
                    "mean_rmse": c.mean_rmse,
                    "mean_ari": c.mean_ari,
                    "admissible": c.mean_ari >= self.ari_floor,
                }
            )
        return pd.DataFrame(rows)


def _choose(results: list[CandidateResult], floor: float) -> CandidateResult | None:
    ok = [r for r in results if r.mean_ari >= floor]
    # ties on RMSE go to the smaller model
    return min(ok, key=lambda r: (r.mean_rmse, r.p)) if ok else None


def _stability(assignments, rng) -> float:
    ref = int(rng.integers(len(assignments)))
    return float(np.mean([adjusted_rand_index(a, assignments[ref]) for i, a in enumerate(assignments) if i != ref]))


def _folds(panel: ReturnsPanel, plan: SplitPlan):
    for tr, val in plan.folds(panel.dates):
        norm = fit_normalizer(panel, tr)
        yield norm.transform(panel.values[tr]), norm.transform(panel.values[val])


def evaluate_nmf(panel: ReturnsPanel, plan: SplitPlan, p: int, cfg: SelectionConfig, seed: int = 0) -> CandidateResult:
    """n_runs convex-NMF fits per validation window, each on a block
    bootstrap of the train part; RMSE on the window and ARI vs a randomly
    drawn reference run."""
    rng = np.random.default_rng([seed, p])
    rmses, aris, consensus = [], [], []
    for Xtr, Xval in _folds(panel, plan):
        T = Xtr.shape[0]
        block = min(cfg.block_length, T)
        errs, assignments = [], []
        for r in range(cfg.n_runs):
            idx = bootstrap_indices(T, block, rng)
            model = fit_convex_nmf(Xtr[idx], p, cfg.nmf_max_iter, cfg.nmf_tol, seed=int(rng.integers(2**31)))
            errs.append(rmse(Xval, nmf_reconstruct(model, Xval)))
            try:
                assignments.append(assign_clusters(unit_normalize_loadings(model).W, source="nmf"))
            except ValueError:
                assignments.append(assign_clusters(model.W, source="nmf"))
        rmses.append(float(np.mean(errs)))
        aris.append(_stability(assignments, rng))
        consensus.append(consensus_matrix(assignments))
    return CandidateResult("nmf", p, {}, rmses, aris, np.mean(consensus, axis=0))


def evaluate_autoencoder(
    panel: ReturnsPanel, plan: SplitPlan, p: int, train_cfg: TrainConfig, cfg: SelectionConfig, params: dict, seed: int = 0
) -> CandidateResult:
    """Same loop for one autoencoder hyperparameter point; every run draws its
    own bootstrap resamples during training and its own warm start."""
    rng = np.random.default_rng([seed, p, 1])
    rmses, aris, consensus = [], [], []
    for Xtr, Xval in _folds(panel, plan):
        errs, assignments = [], []
        for r in range(cfg.n_runs):
            s = int(rng.integers(2**31))
            warm = fit_convex_nmf(Xtr, p, cfg.nmf_max_iter, cfg.nmf_tol, seed=s)
            model, _ = train(Xtr, Xval, train_cfg, warm, seed=s)
            errs.append(rmse(Xval, ae_reconstruct(model, Xval)))
            assignments.append(assign_clusters(model.W, source="autoencoder"))
        rmses.append(float(np.mean(errs)))
        aris.append(_stability(assignments, rng))
        consensus.append(consensus_matrix(assignments))
    return CandidateResult("ae", p, dict(params), rmses, aris, np.mean(consensus, axis=0))


def _run(fn, calls, jobs):
    if jobs > 1 and len(calls) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, *zip(*calls)))
    return [fn(*c) for c in calls]


def select_model(
    panel: ReturnsPanel, plan: SplitPlan, cfg: SelectionConfig = SelectionConfig(), seed: int = 0, jobs: int = 1
) -> SelectionReport:
    """Pick p with convex NMF, then autoencoder hyperparameters at that p.

    Among candidates whose mean ARI reaches ``cfg.ari_floor`` the lowest
    mean validation RMSE wins. Candidates are scored on ``jobs`` processes;
    every candidate has its own seeded stream, so results do not depend on
    ``jobs``.
    """
    results = _run(evaluate_nmf, [(panel, plan, p, cfg, seed) for p in cfg.candidate_ps], jobs)
    best = _choose(results, cfg.ari_floor)
    if best is None:
        logger.warning("no candidate p reaches mean ARI %.2f", cfg.ari_floor)
        return SelectionReport(results, NO_ADMISSIBLE, ari_floor=cfg.ari_floor)
    report = SelectionReport(results, "ok", best.p, {}, cfg.ari_floor)
    if not cfg.ae_grid:
        return report

    calls = [(panel, plan, best.p, replace(cfg.train, **params), cfg, params, seed) for params in cfg.ae_grid]
    ae_results = _run(evaluate_autoencoder, calls, jobs)
    report.candidates.extend(ae_results)
    ae_best = _choose(ae_results, cfg.ari_floor)
    if ae_best is None:
        logger.warning("no autoencoder grid point reaches mean ARI %.2f", cfg.ari_floor)
        report.status = NO_ADMISSIBLE
        return report
    report.chosen_params = dict(ae_best.params)
    return report
