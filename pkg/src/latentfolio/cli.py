"""Command-line pipeline: ``select`` -> ``backtest`` -> ``hedge`` -> ``report``.

Stages communicate only through files under ``--out-dir``; each stage
records its config, data hash, seed, outputs and timestamps in
``manifest.json``. Exit codes: 0 success, 1 usage, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import autoencoder, nmf
from .allocation import SolverError
from .autoencoder import TrainingDivergence
from .backtest import BacktestReport, report_from_targets, run_backtest
from .config import ConfigError, PipelineConfig, apply_overrides, flatten, load_config, parse_text, to_text, with_selection
from .data import DataError, Normalizer, ReturnsPanel, load_panel, make_splits, read_csv
from .hedge import MonthModels, apply_hedge, forecast_signals, validation_table
from .selection import select_model
from .strategies import STRATEGIES

logger = logging.getLogger("latentfolio")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FLOAT = "%.17g"  # exact float64 round trip
METRIC_FLOAT = "%.10g"


class UsageError(Exception):
    pass


class ArtifactError(DataError):
    pass


class NumericFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# files and manifest -------------------------------------------------------

class Stage:
    """Collects the files one command writes and records them in the manifest."""

    def __init__(self, name: str, out_dir: Path, cfg: PipelineConfig, data_path: Path | None, seed: int):
        self.name, self.out_dir, self.cfg, self.seed = name, out_dir, cfg, seed
        self.data_hash = _sha256(data_path) if data_path else None
        self.started = _now()
        self.outputs: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.out_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.outputs:
            self.outputs.append(rel)
        return p

    def csv(self, rel: str, frame: pd.DataFrame, index: bool = False, float_format: str = FLOAT) -> Path:
        p = self.path(rel)
        frame.to_csv(p, index=index, float_format=float_format, date_format="%Y-%m-%d", lineterminator="\n")
        return p

    def text(self, rel: str, content: str) -> Path:
        p = self.path(rel)
        p.write_text(content, encoding="utf-8")
        return p

    def finish(self, status: str = "ok") -> None:
        manifest_path = self.out_dir / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {"stages": {}}
        missing = [o for o in self.outputs if not (self.out_dir / o).exists()]
        if missing:
            raise RuntimeError(f"outputs not written: {missing}")
        manifest["stages"][self.name] = {
            "status": status,
            "config": {k: v for k, v in (line.split(" = ", 1) for line in to_text(self.cfg).splitlines())},
            "data_sha256": self.data_hash,
            "seed": self.seed,
            "outputs": sorted(self.outputs),
            "started": self.started,
            "finished": _now(),
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _date_tag(date) -> str:
    return pd.Timestamp(date).strftime("%Y%m%d")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"missing {what}: {path} (run the earlier stage first)")
    return path


def _load_cfg(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
    if args.set:
        items = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            items[k.strip()] = v.strip()
        cfg = apply_overrides(cfg, items)
    if args.seed is not None:
        cfg = apply_overrides(cfg, {"seed": str(args.seed)})
    return cfg


def _load_data(args, cfg: PipelineConfig) -> ReturnsPanel:
    if not args.data:
        raise UsageError("--data is required")
    if not Path(args.data).exists():
        raise UsageError(f"data file not found: {args.data}")
    classes = cfg.data.asset_classes or None
    if classes and not Path(classes).exists():
        raise UsageError(f"asset-class file not found: {classes}")
    return load_panel(args.data, cfg.data.format, classes)


def _test_start(cfg: PipelineConfig) -> pd.Timestamp:
    if not cfg.data.test_start:
        raise UsageError("data.test_start must be set in the config")
    return pd.Timestamp(cfg.data.test_start)


def _chosen(out_dir: Path, cfg: PipelineConfig) -> PipelineConfig:
    path = out_dir / "select" / "chosen.cfg"
    if path.exists():
        return parse_text(path.read_text(encoding="utf-8"), cfg)
    logger.warning("no %s; using the configured model settings", path)
    return cfg


# commands -----------------------------------------------------------------

def cmd_select(args) -> int:
    cfg = _load_cfg(args)
    panel = _load_data(args, cfg)
    test_start = _test_start(cfg)
    before = panel.dates[panel.dates < test_start]
    if before.size == 0:
        raise DataError("no data before data.test_start")
    train_end = pd.Timestamp(cfg.data.train_end) if cfg.data.train_end else before[-1]
    plan = make_splits(panel, train_end, cfg.data.n_val_months, test_start)
    out = Path(args.out_dir)
    stage = Stage("select", out, cfg, Path(args.data), cfg.seed)

    report = select_model(panel, plan, cfg.selection_config(), seed=cfg.seed, jobs=args.jobs)
    stage.csv("select/selection.csv", report.to_frame(), float_format=METRIC_FLOAT)
    for i, c in enumerate(report.candidates):
        tag = f"nmf_p{c.p}" if c.family == "nmf" else f"ae_p{c.p}_{i}"
        frame = pd.DataFrame(c.consensus, index=list(panel.codes), columns=list(panel.codes))
        stage.csv(f"select/consensus_{tag}.csv", frame, index=True, float_format=METRIC_FLOAT)
    if not report.ok:
        stage.finish(report.status)
        raise NumericFailure(f"model selection: {report.status} (ARI floor {cfg.select.ari_floor})")
    chosen = with_selection(cfg, report.chosen_p, report.chosen_params)
    lines = [f"model.p = {chosen.model.p}"] + [
        f"train.{k} = {v!r}" for k, v in sorted(flatten(chosen.train).items()) if k in report.chosen_params
    ]
    stage.text("select/chosen.cfg", "\n".join(lines) + "\n")
    stage.finish()
    print(f"selected p={report.chosen_p} {report.chosen_params or ''}".rstrip())
    return EXIT_OK


def _strategies(args, cfg) -> list[str]:
    names = [s.strip() for s in args.strategies.split(",")] if args.strategies else list(cfg.run.strategies)
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown or not names:
        raise UsageError(f"unknown strategy {', '.join(unknown) or '(none)'}; choose from {', '.join(STRATEGIES)}")
    return names


def _weights_frame(report: BacktestReport) -> pd.DataFrame:
    frame = report.weights.copy()
    frame.insert(0, "leverage", report.leverage)
    frame.index.name = "date"
    return frame


def _metrics_frame(reports) -> pd.DataFrame:
    frame = pd.DataFrame({name: r.metrics for name, r in reports.items()}).T
    frame.index.name = "strategy"
    return frame


def _save_normalizer(path: Path, codes, norm: Normalizer) -> None:
    pd.DataFrame({"asset": list(codes), "mu": norm.mu, "sigma": norm.sigma}).to_csv(
        path, index=False, float_format=FLOAT, lineterminator="\n"
    )


def _load_normalizer(path: Path) -> Normalizer:
    frame = read_csv(path)
    return Normalizer(frame["mu"].to_numpy(float), frame["sigma"].to_numpy(float))


def cmd_backtest(args) -> int:
    base = _load_cfg(args)
    names = _strategies(args, base)
    out = Path(args.out_dir)
    cfg = _chosen(out, base)
    panel = _load_data(args, cfg)
    stage = Stage("backtest", out, cfg, Path(args.data), cfg.seed)

    run = run_backtest(
        panel, names, cfg.backtest, _test_start(cfg), cfg.factor_config(), cfg.data.test_end or None, seed=cfg.seed
    )
    returns = pd.DataFrame({n: r.returns for n, r in run.reports.items()})
    returns.index.name = "date"
    stage.csv("backtest/returns.csv", returns, index=True)
    nav = (1.0 + returns).cumprod()
    stage.csv("backtest/nav.csv", nav, index=True)
    stage.csv("backtest/metrics.csv", _metrics_frame(run.reports), index=True, float_format=METRIC_FLOAT)
    for name, r in run.reports.items():
        stage.csv(f"backtest/weights_{name}.csv", _weights_frame(r), index=True)
    for fam, diag in run.diagnostics.items():
        stage.csv(f"backtest/r2_{fam}.csv", diag.r2.rename_axis("asset").reset_index(), float_format=METRIC_FLOAT)
        stage.csv(f"backtest/factor_corr_{fam}.csv", diag.factor_corr.rename_axis("asset"), index=True,
                  float_format=METRIC_FLOAT)
    for fit in run.fits:
        tag = _date_tag(fit.date)
        _save_normalizer(stage.path(f"backtest/models/normalizer_{tag}.csv"), panel.codes, fit.normalizer)
        if fit.nmf:
            nmf.save_model(fit.nmf[0], stage.path(f"backtest/models/nmf_{tag}.txt"))
        if fit.ae:
            autoencoder.save_model(fit.ae[0], stage.path(f"backtest/models/ae_{tag}.txt"))
            fit.ae_reports[0].to_csv(stage.path(f"backtest/models/ae_{tag}_training.csv"))
    stage.finish()
    print(_metrics_frame(run.reports)[["SR", "VaR", "ES", "MDD", "TTO"]].to_string(float_format="%.5g"))
    return EXIT_OK


def _base_report(out: Path, panel: ReturnsPanel, name: str, cfg: PipelineConfig) -> BacktestReport:
    frame = read_csv(_require(out / "backtest" / f"weights_{name}.csv", f"backtest weights for {name}"),
                     index_col="date", parse_dates=["date"])
    returns = read_csv(_require(out / "backtest" / "returns.csv", "backtest returns"), index_col="date",
                       parse_dates=["date"])
    if list(frame.columns[1:]) != list(panel.codes):
        raise DataError("backtest weights do not match the data's assets")
    stop = int(panel.dates.searchsorted(returns.index[-1], side="right"))
    weights = frame.drop(columns="leverage")
    return report_from_targets(panel.rows(slice(0, stop)), name, weights, frame["leverage"], cfg.backtest)


def cmd_hedge(args) -> int:
    base_cfg = _load_cfg(args)
    out = Path(args.out_dir)
    cfg = _chosen(out, base_cfg)
    name = args.strategy or cfg.run.hedge_strategy
    if name not in STRATEGIES:
        raise UsageError(f"unknown strategy {name}")
    panel = _load_data(args, cfg)
    base = _base_report(out, panel, name, cfg)
    months = []
    for date in base.weights.index:
        tag = _date_tag(date)
        model = autoencoder.load_model(_require(out / "backtest" / "models" / f"ae_{tag}.txt", "autoencoder model"))
        norm = _load_normalizer(_require(out / "backtest" / "models" / f"normalizer_{tag}.csv", "normalizer"))
        months.append(MonthModels(pd.Timestamp(date), model, norm))
    stage = Stage("hedge", out, cfg, Path(args.data), cfg.seed)

    sig = forecast_signals(panel, months, cfg.hedge, end=base.returns.index[-1], jobs=args.jobs)
    p = months[0].model.p
    S = sig.signal_matrix(base.returns.index, p)
    hedged = apply_hedge(panel, base, sig.assignments, S, cfg.backtest, cfg.hedge.fraction)

    d = f"hedge/{name}"
    signals = sig.signals.rename(columns={"prob": "p_hat", "signal": "c_hat", "cls": "c"})
    stage.csv(f"{d}/signals.csv", signals)
    stage.csv(f"{d}/validation.csv", validation_table(sig.signals, p), float_format=METRIC_FLOAT)
    returns = pd.DataFrame({"unhedged": base.returns, "hedged": hedged.returns})
    returns.index.name = "date"
    stage.csv(f"{d}/returns.csv", returns, index=True)
    stage.csv(f"{d}/nav.csv", (1.0 + returns).cumprod(), index=True)
    stage.csv(f"{d}/metrics.csv", _metrics_frame({"unhedged": base, "hedged": hedged}), index=True,
              float_format=METRIC_FLOAT)
    stage.csv(f"{d}/weights.csv", _weights_frame(hedged), index=True)
    stage.finish()
    print(_metrics_frame({"unhedged": base, "hedged": hedged})[["SR", "ES", "MDD"]].to_string(float_format="%.5g"))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    manifest = out / "manifest.json"
    if not out.is_dir() or not manifest.exists():
        raise ArtifactError(f"no pipeline run found in {out}")
    stages = json.loads(manifest.read_text(encoding="utf-8"))["stages"]
    if "backtest" not in stages:
        raise ArtifactError(f"{out} has no backtest outputs")
    cfg = parse_text("\n".join(f"{k} = {v}" for k, v in stages["backtest"]["config"].items()))
    stage = Stage("report", out, cfg, None, cfg.seed)

    returns = read_csv(out / "backtest" / "returns.csv", index_col="date", parse_dates=["date"])
    total = (1.0 + returns).cumprod() - 1.0
    hedge_dirs = sorted(p for p in (out / "hedge").glob("*") if p.is_dir()) if (out / "hedge").exists() else []
    for hd in hedge_dirs:
        hr = read_csv(hd / "returns.csv", index_col="date", parse_dates=["date"])
        total[f"{hd.name}_hedged"] = (1.0 + hr["hedged"]).cumprod() - 1.0
    stage.csv("report/total_return.csv", total.rename_axis("date"), index=True, float_format=METRIC_FLOAT)

    rows = []
    for name in returns.columns:
        w = read_csv(out / "backtest" / f"weights_{name}.csv", index_col="date", parse_dates=["date"])
        long = w.drop(columns="leverage").stack().rename("weight").reset_index()
        long.columns = ["date", "asset", "weight"]
        long.insert(1, "strategy", name)
        rows.append(long)
    stage.csv("report/weights_long.csv", pd.concat(rows, ignore_index=True), float_format=METRIC_FLOAT)

    models = sorted((out / "backtest" / "models").glob("ae_*[0-9].txt")) or sorted(
        (out / "backtest" / "models").glob("nmf_*.txt")
    )
    codes = []
    norms = sorted((out / "backtest" / "models").glob("normalizer_*.csv"))
    if norms:
        codes = read_csv(norms[-1])["asset"].tolist()
    if models:
        last = models[-1]
        W = (autoencoder.load_model(last) if last.name.startswith("ae_") else nmf.load_model(last)).W
        heat = pd.DataFrame(
            [(codes[i] if codes else i, k, W[i, k]) for i in range(W.shape[0]) for k in range(W.shape[1])],
            columns=["asset", "factor", "loading"],
        )
        heat.insert(0, "model", last.stem)
        stage.csv("report/loadings.csv", heat, float_format=METRIC_FLOAT)
    for corr_file in sorted((out / "backtest").glob("factor_corr_*.csv")):
        fam = corr_file.stem.removeprefix("factor_corr_")
        corr = read_csv(corr_file, index_col="asset").stack().rename("corr").reset_index()
        corr.columns = ["asset", "factor", "corr"]
        stage.csv(f"report/correlation_{fam}.csv", corr, float_format=METRIC_FLOAT)
    for hd in hedge_dirs:
        sig = read_csv(hd / "signals.csv")
        act = sig[["date", "factor"]].assign(active=1 - sig["c"])
        stage.csv(f"report/activation_map_{hd.name}.csv", act)
        stage.csv(f"report/probability_overlay_{hd.name}.csv", sig[["date", "factor", "p_hat", "c"]],
                  float_format=METRIC_FLOAT)
    if args.plots:
        _plots(stage, total)
    stage.finish()
    print(f"report written to {out / 'report'}")
    return EXIT_OK


def _plots(stage: Stage, total: pd.DataFrame) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    for col in total.columns:
        ax.plot(total.index, total[col], label=col, lw=1)
    ax.set_ylabel("total return")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(stage.path("report/total_return.svg"), format="svg", metadata={"Date": None})
    plt.close(fig)


# entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentfolio", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--data", help="returns or prices CSV (first column 'date')")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent fits")
    common.add_argument("--out-dir", default="run", help="directory for all stage outputs")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--plots", action="store_true", help="also render SVG figures (report)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("select", parents=[common], help="choose p and training hyperparameters")
    bt = sub.add_parser("backtest", parents=[common], help="monthly out-of-sample backtest")
    bt.add_argument("--strategies", help="comma-separated strategy names")
    hd = sub.add_parser("hedge", parents=[common], help="tail-event hedging overlay")
    hd.add_argument("--strategy", help="backtested strategy to hedge")
    sub.add_parser("report", parents=[common], help="plot-ready CSVs from a run directory")
    return parser


COMMANDS = {"select": cmd_select, "backtest": cmd_backtest, "hedge": cmd_hedge, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, SolverError, TrainingDivergence, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
