import pytest
import yaml

import config
from errors import ConfigError
from settings import RunConfig, load_config


def write_yaml(path, payload):
    path.write_text(yaml.safe_dump(payload))
    return path


def test_defaults():
    cfg = load_config()
    assert cfg.model.variant == "full"
    assert cfg.prior.Q == config.DEFAULT_Q
    assert cfg.schedule.burnin == round(config.DEFAULT_BURNIN_FRACTION * config.DEFAULT_ITERATIONS)


def test_file_and_dotted_overrides(tmp_path):
    path = write_yaml(tmp_path / "run.yaml", {"seed": 3, "schedule": {"iterations": 100, "burnin_fraction": 0.5}})
    cfg = load_config(path, {"schedule.iterations": 40, "model.variant": "standard", "paths.out": None})
    assert cfg.seed == 3
    assert cfg.schedule.iterations == 40
    assert cfg.schedule.burnin == 20
    assert cfg.model.variant == "standard"
    assert cfg.paths.out == "runs/out"


@pytest.mark.parametrize("payload", [
    {"unknown": 1},
    {"schedule": {"burnin_fraction": 1.0}},
    {"model": {"variant": "other"}},
    {"prior": {"eta_kernel": "gaussian"}},
    {"design": {"tau": {"road": 0.0}}},
])
def test_invalid_settings(tmp_path, payload):
    with pytest.raises(ConfigError):
        load_config(write_yaml(tmp_path / "run.yaml", payload))


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_prior_overrides_leave_derived_fields_out():
    overrides = RunConfig().prior.overrides()
    assert "Q" not in overrides
    assert "var_logphi" not in overrides
    assert overrides["eta_kernel"] == config.ETA_KERNEL


def test_require_paths(tmp_path):
    nodes = tmp_path / "nodes.csv"
    nodes.write_text("id,x,y\n")
    cfg = RunConfig.model_validate({"paths": {"nodes": str(nodes)}})
    with pytest.raises(ConfigError, match="paths.gdm"):
        cfg.require_paths("fit")
    with pytest.raises(ConfigError, match="paths.chains"):
        cfg.require_paths("score")
    cfg.require_paths("simulate")

    missing = RunConfig.model_validate({"paths": {"nodes": str(tmp_path / "none.csv"), "responses": str(nodes)}})
    with pytest.raises(ConfigError, match="does not exist"):
        missing.require_paths("fit")
