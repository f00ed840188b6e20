import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentfolio.config import (
    ConfigError,
    PipelineConfig,
    apply_overrides,
    load_config,
    parse_text,
    save_config,
    to_text,
    with_selection,
)

CONFIGS = ["configs/default.cfg", "configs/synthetic.cfg"]


def test_defaults_roundtrip():
    cfg = PipelineConfig()
    assert parse_text(to_text(cfg)) == cfg


@pytest.mark.parametrize("path", CONFIGS)
def test_shipped_configs_roundtrip(path, tmp_path):
    cfg = load_config(path)
    save_config(cfg, tmp_path / "x.cfg")
    assert load_config(tmp_path / "x.cfg") == cfg


def test_default_config_values():
    cfg = load_config("configs/default.cfg")
    assert cfg.model.p == 4
    assert (cfg.train.lambda1, cfg.train.lambda2, cfg.train.lambda3, cfg.train.eta) == (1e-3, 1e-2, 1e-2, 1e-3)
    assert cfg.train.block_length == 60 and cfg.select.ari_floor == 0.95


def test_overrides_are_applied_together():
    cfg = apply_overrides(PipelineConfig(), {"train.epochs": "10", "train.patience": "5"})
    assert (cfg.train.epochs, cfg.train.patience) == (10, 5)


def test_tuple_and_none_values():
    cfg = parse_text("select.candidate_ps = 2, 3\nbacktest.vol_target = none\nhedge.grid.families = norm, sstd\n")
    assert cfg.select.candidate_ps == (2, 3)
    assert cfg.backtest.vol_target is None
    assert cfg.hedge.grid.families == ("norm", "sstd")
    assert parse_text(to_text(cfg)) == cfg


@pytest.mark.parametrize(
    "text", ["nope = 1\n", "train.epochs = ten\n", "train = 3\n", "train.lambda1 = -1\n", "just words\n"]
)
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_text(text)


@given(
    st.integers(0, 10_000), st.floats(1e-6, 1.0), st.lists(st.integers(1, 9), min_size=1, max_size=4),
    st.sampled_from([None, 0.05, 0.1]),
)
@settings(max_examples=50, deadline=None)
def test_roundtrip_property(seed, eta, ps, vol):
    cfg = apply_overrides(PipelineConfig(), {"seed": str(seed), "train.eta": repr(eta),
                                             "select.candidate_ps": ", ".join(map(str, ps)),
                                             "backtest.vol_target": repr(vol) if vol else "none"})
    assert parse_text(to_text(cfg)) == cfg


def test_with_selection():
    cfg = with_selection(PipelineConfig(), 3, {"eta": 0.01})
    assert cfg.model.p == 3 and cfg.train.eta == 0.01
    fc = cfg.factor_config()
    assert fc.p == 3 and fc.train.eta == 0.01
