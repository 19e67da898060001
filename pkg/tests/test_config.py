import pytest
import yaml

from latentanom.config import (
    OUTPUT_ROOT_ENV,
    RunConfig,
    config_from_dict,
    expand_grid,
    load_config,
    save_config,
    set_dotted,
)
from latentanom.errors import ConfigError


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    gen = cfg.gen_config(200, 1)
    assert gen.L == 50 and gen.sigma_prior == 0.5 and gen.gamma == 0.0
    assert cfg.gen_config(200, 3).L == 100 and cfg.gen_config(200, 3).gamma == 0.01
    pc = cfg.patch_config()
    assert (pc.mode, pc.tau) == ("deviation", 0.2)


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"data": {"window": 10, "widnow": 3}},
    {"model": {"sigma_prio": 0.5}},
    {"model": {"T": 10}},
    {"sweep": {"grid": {}, "extra": 1}},
    {"data": [1, 2]},
])
def test_unknown_keys_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_invalid_values_surface_as_config_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"delta_min": 0.3, "delta_max": 0.2}}).gen_config(16, 1)
    with pytest.raises(ConfigError):
        config_from_dict({"patch": {"mode": "wiggle"}}).patch_config()


def test_snapshot_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 4, "data": {"window": 32, "path": "x.csv"},
                            "model": {"channels": [8, 8], "sigma_prior": 0.25},
                            "sweep": {"grid": {"patch.tau": [0.1, 0.2]}}})
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again.to_dict() == yaml.safe_load((tmp_path / "c.yaml").read_text())
    assert again.seed == 4 and again.data.window == 32 and again.model["sigma_prior"] == 0.25


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert load_config(None) == RunConfig()


def test_set_dotted():
    cfg = set_dotted(RunConfig(), "model.sigma_prior", 1.0)
    assert cfg.model == {"sigma_prior": 1.0}
    assert set_dotted(cfg, "patch.tau", 0.05).patch.tau == 0.05
    with pytest.raises(ConfigError):
        set_dotted(cfg, "nope.tau", 1)
    with pytest.raises(ConfigError):
        set_dotted(cfg, "patch.tua", 1)


def test_expand_grid():
    runs = expand_grid({"b": [1, 2], "a": ["x"]})
    assert runs == [{"a": "x", "b": 1}, {"a": "x", "b": 2}]
    assert expand_grid({}) == [{}]
    with pytest.raises(ConfigError):
        expand_grid({"a": []})


def test_output_root(monkeypatch):
    cfg = RunConfig(output_root="base")
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert str(cfg.output_dir("train")) == "base/train"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "/env")
    assert str(cfg.output_dir("train")) == "/env/train"
