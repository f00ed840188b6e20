"""Pipeline configuration as nested dataclasses with a flat ``key = value``
text form (``section.field = value``; lists are comma separated)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .autoencoder import TrainConfig
from .backtest import BacktestConfig
from .hedge import HedgeConfig
from .selection import SelectionConfig
from .strategies import FactorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    format: str = "returns"
    asset_classes: str = ""
    test_start: str = ""
    test_end: str = ""
    # selection train set ends here; empty means the last date before test_start
    train_end: str = ""
    n_val_months: int = 6


@dataclass(frozen=True)
class SelectConfig:
    candidate_ps: tuple[int, ...] = (2, 3, 4, 5, 6)
    n_runs: int = 30
    ari_floor: float = 0.95
    block_length: int = 60
    # autoencoder grid: product of the non-empty lists at the chosen p
    lambda1: tuple[float, ...] = ()
    lambda2: tuple[float, ...] = ()
    lambda3: tuple[float, ...] = ()
    eta: tuple[float, ...] = ()

    def ae_grid(self) -> tuple[dict, ...]:
        axes = {k: getattr(self, k) for k in ("lambda1", "lambda2", "lambda3", "eta") if getattr(self, k)}
        if not axes:
            return ()
        return tuple(dict(zip(axes, combo)) for combo in itertools.product(*axes.values()))


@dataclass(frozen=True)
class NmfConfig:
    max_iter: int = 500
    tol: float = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    p: int = 4
    n_seeds: int = 15
    val_months: int = 1


@dataclass(frozen=True)
class RunConfig:
    strategies: tuple[str, ...] = ("aerp", "aercw", "aeaa", "nmfrp", "erc", "hrp", "equal")
    hedge_strategy: str = "aerp"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    nmf: NmfConfig = field(default_factory=NmfConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    hedge: HedgeConfig = field(default_factory=HedgeConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def selection_config(self) -> SelectionConfig:
        s = self.select
        return SelectionConfig(
            candidate_ps=s.candidate_ps,
            n_runs=s.n_runs,
            ari_floor=s.ari_floor,
            block_length=s.block_length,
            nmf_max_iter=self.nmf.max_iter,
            nmf_tol=self.nmf.tol,
            ae_grid=s.ae_grid(),
            train=self.train,
        )

    def factor_config(self) -> FactorConfig:
        return FactorConfig(
            p=self.model.p,
            n_seeds=self.model.n_seeds,
            nmf_max_iter=self.nmf.max_iter,
            nmf_tol=self.nmf.tol,
            train=self.train,
            val_months=self.model.val_months,
        )


# flat text form ----------------------------------------------------------

def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _parse_scalar(text: str, like):
    t = text.strip()
    if t.lower() == "none" and not isinstance(like, str):
        return None
    if isinstance(like, bool):
        if t.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {t!r}")
        return t.lower() in ("true", "1", "yes")
    if isinstance(like, int):
        return int(t)
    if isinstance(like, float) or like is None:
        return float(t)
    return t


def _parse(text: str, default):
    if isinstance(default, tuple):
        like = default[0] if default else 0.0
        return tuple(_parse_scalar(x, like) for x in text.split(",") if x.strip())
    return _parse_scalar(text, default)


def flatten(obj, prefix: str = "") -> dict[str, object]:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(v):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def to_text(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in flatten(cfg).items())


def _build(obj, tree: dict, prefix: str = ""):
    # one replace per section so __post_init__ checks see all new values together
    names = {f.name for f in fields(obj)}
    kwargs = {}
    for name, sub in tree.items():
        key = prefix + name
        if name not in names:
            raise ConfigError(f"unknown key {key!r}")
        cur = getattr(obj, name)
        if isinstance(sub, dict):
            if not is_dataclass(cur):
                raise ConfigError(f"{key!r} has no sub-keys")
            kwargs[name] = _build(cur, sub, key + ".")
        elif is_dataclass(cur):
            raise ConfigError(f"{key!r} is a section, not a value")
        else:
            try:
                kwargs[name] = _parse(sub, cur)
            except ValueError as exc:
                raise ConfigError(f"{key} = {sub}: {exc}") from None
    try:
        return replace(obj, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def apply_overrides(cfg: PipelineConfig, items: dict[str, str]) -> PipelineConfig:
    tree: dict = {}
    for key, raw in items.items():
        *head, last = key.split(".")
        node = tree
        for part in head:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key!r} conflicts with another key")
        node[last] = raw
    return _build(cfg, tree)


def parse_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        items[key] = raw
    return apply_overrides(base or PipelineConfig(), items)


def load_config(path) -> PipelineConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(to_text(cfg), encoding="utf-8")


def with_selection(cfg: PipelineConfig, p: int, params: dict) -> PipelineConfig:
    """Config with the selected factor count and training hyperparameters."""
    return replace(cfg, model=replace(cfg.model, p=p), train=replace(cfg.train, **params))

