import numpy as np
import pytest
import yaml

from fiberae.config import DEFAULTS, SCHEMA_VERSION, ExperimentConfig, load_config
from fiberae.errors import ConfigurationError


def test_defaults_load_without_file():
    cfg = load_config(environ={})
    assert cfg.seed == 0
    assert cfg["link"]["n_spans"] == 30
    assert cfg.link().n_spans == 30
    assert cfg.pulse().rolloff == 0.1


def test_file_overrides(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"seed": 7, "link": {"n_spans": 10}}))
    cfg = load_config(path, environ={})
    assert cfg.seed == 7
    assert cfg.link().n_spans == 10
    assert cfg.link().alpha_db_km == 0.21  # untouched default


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"links": {"n_spans": 10}}))
    with pytest.raises(ConfigurationError, match="unknown config key"):
        load_config(path, environ={})
    path.write_text(yaml.safe_dump({"link": {"alpha": 0.2}}))
    with pytest.raises(ConfigurationError, match="link.alpha"):
        load_config(path, environ={})


def test_env_overrides():
    env = {"FIBERAE_seed": "9", "FIBERAE_train__iterations": "5",
           "FIBERAE_link__gamma_w_km": "0.0", "OTHER": "x"}
    cfg = load_config(environ=env)
    assert cfg.seed == 9
    assert cfg["train"]["iterations"] == 5
    assert cfg.link().gamma_w_km == 0.0


def test_type_coercion_errors():
    with pytest.raises(ConfigurationError):
        load_config(overrides={"seed": "abc"}, environ={})
    with pytest.raises(ConfigurationError):
        load_config(overrides={"seed": 1.5}, environ={})
    with pytest.raises(ConfigurationError):
        load_config(overrides={"channel": {"include_ase": "maybe"}}, environ={})
    cfg = load_config(overrides={"channel": {"include_ase": "false"}}, environ={})
    assert cfg["channel"]["include_ase"] is False


def test_list_coercion():
    cfg = load_config(overrides={"sweep": {"powers": "1.0, 2.0 3.0"}}, environ={})
    assert cfg["sweep"]["powers"] == [1.0, 2.0, 3.0]


def test_schema_version_guard():
    with pytest.raises(ConfigurationError, match="schema_version"):
        load_config(overrides={"schema_version": SCHEMA_VERSION + 1}, environ={})


def test_dump_roundtrip(tmp_path):
    cfg = load_config(overrides={"seed": 3}, environ={})
    out = tmp_path / "resolved.yaml"
    cfg.dump(out)
    reloaded = load_config(out, environ={})
    assert reloaded.raw == cfg.raw
    # the snapshot materializes every default
    assert yaml.safe_load(out.read_text()).keys() == DEFAULTS.keys()


def test_factory_methods():
    cfg = load_config(overrides={"channel": {"rp_stages": 1, "rp_branches": 10},
                                 "link": {"n_spans": 2}}, environ={})
    rp = cfg.rp_config()
    assert len(rp.stages) == 1
    assert rp.stages[0].n_branches == 10
    tc = cfg.train_config(iterations=5)
    assert tc.iterations == 5
    assert tc.rp_branches == 10
    opts = cfg.ssfm_options(include_ase=False)
    assert not opts.include_ase
