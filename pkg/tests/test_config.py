import pytest

from partial_reid.config import ConfigError, RunConfig, read_config_file, resolve_config


def test_defaults_validate():
    cfg = resolve_config(env={})
    assert cfg == RunConfig()
    assert cfg.lam == 10.0 and cfg.n_strides == 6 and cfg.protocol == "crop-cuhk03"


def test_key_value_file(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nn-sigma = 2.5\nsteps=7\nprotocol = custom\n")
    assert read_config_file(tmp_path / "c.cfg") == {"n_sigma": 2.5, "steps": 7, "protocol": "custom"}


def test_json_file(tmp_path):
    (tmp_path / "c.json").write_text('{"lam": 3, "seed": 11}')
    cfg = resolve_config(tmp_path / "c.json", env={})
    assert cfg.lam == 3.0 and isinstance(cfg.lam, float) and cfg.seed == 11


def test_precedence(tmp_path):
    (tmp_path / "c.cfg").write_text("seed = 1\nlr = 0.5\n")
    cfg = resolve_config(tmp_path / "c.cfg", {"lr": 0.1, "seed": None}, env={"PRID_SEED": "9"})
    assert cfg.seed == 9 and cfg.lr == 0.1
    cfg = resolve_config(tmp_path / "c.cfg", {"seed": 3}, env={"PRID_SEED": "9"})
    assert cfg.seed == 3


@pytest.mark.parametrize("field,value", [("s", 0.0), ("o_min", 1.5), ("n_sigma", 0), ("sources", 3),
                                         ("protocol", "market"), ("bins", 1), ("mode", "gan")])
def test_validation_rejects(field, value):
    with pytest.raises(ConfigError):
        resolve_config(overrides={field: value}, env={})


def test_unknown_key(tmp_path):
    (tmp_path / "c.cfg").write_text("foo = 1\n")
    with pytest.raises(ConfigError, match="foo"):
        read_config_file(tmp_path / "c.cfg")


def test_bad_value(tmp_path):
    (tmp_path / "c.cfg").write_text("steps = many\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "c.cfg")
