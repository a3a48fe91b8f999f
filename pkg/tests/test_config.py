import configparser

import pytest

from sprkit import config


def test_defaults_are_typed_and_valid():
    cfg = config.load(None, env={})
    assert cfg["spr"]["lam"] == 0.5 and cfg["relax"]["N_max"] == 6
    assert cfg["grid"]["lambdas"] == (0.1, 0.5, 2.0)
    pc = cfg.pipeline_config()
    assert pc.phase1.lam == 0.5 and pc.finetune.alpha == 0.3
    assert pc.finetune.lr_milestones == (8, 15, 22)


def test_resolved_ini_contains_every_key_and_round_trips(tmp_path):
    text = config.defaults().to_ini()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    for sec, keys in config.SCHEMA.items():
        assert set(parser[sec]) == set(keys)
    path = tmp_path / "r.ini"
    path.write_text(text)
    assert config.load(path, env={}).values == config.defaults().values


def test_file_overrides_defaults(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[spr]\nlam = 2\n[grid]\nalphas = 0.5, 0.7\n[relax]\nN_max = 3\n")
    cfg = config.load(path, env={})
    assert cfg["spr"]["lam"] == 2.0
    assert cfg["grid"]["alphas"] == (0.5, 0.7)
    assert cfg["relax"]["N_max"] == 3
    assert cfg["spr"]["alpha"] == 0.3


def test_environment_overrides_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[spr]\nlam = 2\n")
    cfg = config.load(path, env={"SPRKIT_SPR_LAM": "3.5", "OTHER": "x"})
    assert cfg["spr"]["lam"] == 3.5


@pytest.mark.parametrize(
    "text,match",
    [
        ("[spr]\nlamda = 1\n", "unknown key"),
        ("[sprr]\nlam = 1\n", "unknown section"),
        ("[spr]\nlam = abc\n", "lam"),
        ("[spr]\nalpha = 1.5\n", "alpha"),
        ("[spr]\nvariant = other\n", "variant"),
        ("[phase1]\nlr_milestones = 5, 3\n", "milestones"),
        ("[grid]\nlambdas =\n", "lambdas"),
        ("[run]\nthreads = 0\n", "threads"),
        ("no section header\n", "c.ini"),
    ],
)
def test_bad_files_are_rejected(tmp_path, text, match):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(config.ConfigError, match=match):
        config.load(path, env={})


def test_unknown_environment_override_is_rejected():
    with pytest.raises(config.ConfigError, match="SPRKIT_SPR_LAMDA"):
        config.load(None, env={"SPRKIT_SPR_LAMDA": "1"})


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(config.ConfigError, match="not found"):
        config.load(tmp_path / "nope.ini", env={})


def test_with_overrides_validates():
    cfg = config.with_overrides(config.defaults(), spr={"lam": 1.0})
    assert cfg["spr"]["lam"] == 1.0
    with pytest.raises(config.ConfigError):
        config.with_overrides(cfg, spr={"lamda": 1.0})
    with pytest.raises(config.ConfigError):
        config.with_overrides(cfg, spr={"alpha": -0.1})
