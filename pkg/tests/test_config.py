import json

import pytest

from bggprolong.config import ENV_PREFIX, SCHEMA, TOLERANCE_DEFAULTS, env_overrides, load_config, resolve_config
from bggprolong.errors import ConfigError

BASE = {"algebra": {"n": 3}, "module": {"family": "scalar", "r": 2}}


def test_defaults_filled():
    cfg = resolve_config(BASE, environ={})
    assert cfg["metric"]["family"] == "flat"
    assert cfg["run"]["grid"]["points"] == 21
    assert cfg["run"]["tolerances"] == TOLERANCE_DEFAULTS
    assert cfg["run"]["basepoint"] == [0.0, 0.0, 0.0]


def test_adjoint_default_r():
    cfg = resolve_config({"algebra": {"n": 3}, "module": {"family": "adjoint"}}, environ={})
    assert cfg["module"]["r"] == 1


@pytest.mark.parametrize(
    "patch",
    [
        {"extra": 1},
        {"algebra": {"n": 1}},
        {"module": {"family": "spinor"}},
        {"run": {"step": 0}},
        {"run": {"tolerances": {"holonomy": -1e-6}}},
        {"run": {"tolerances": {"bogus": 1.0}}},
        {"output": {"formats": ["xml"]}},
        {"metric": {"family": "sphere", "params": {"radius": 1.0, "colour": "red"}}},
    ],
)
def test_schema_rejections(patch):
    with pytest.raises(ConfigError):
        resolve_config({**BASE, **patch}, environ={})


@pytest.mark.parametrize(
    "raw",
    [
        {"algebra": {"n": 2}, "module": {"family": "adjoint"}},
        {"algebra": {"n": 3}, "module": {"family": "adjoint", "r": 2}},
        {"algebra": {"n": 3}, "module": {"family": "scalar", "r": 3}, "metric": {"family": "sphere"}},
        {"algebra": {"n": 3}, "module": {"family": "scalar", "r": 2}, "metric": {"family": "conformal_poly"}},
        {**BASE, "run": {"basepoint": [0.0, 0.0]}},
        {**BASE, "lower_order": {"A": [{"i": 3, "j": 0, "coefficients": [1.0]}]}},
        {"algebra": {"n": 3}, "module": {"family": "scalar", "r": 3},
         "lower_order": {"A": [{"i": 0, "j": 0, "coefficients": [1.0]}]}},
    ],
)
def test_cross_field_rules(raw):
    with pytest.raises(ConfigError):
        resolve_config(raw, environ={})


def test_env_overrides():
    env = {ENV_PREFIX + "HOLONOMY": "1e-7", "UNRELATED": "x"}
    assert env_overrides(env) == {"holonomy": 1e-7}
    assert resolve_config(BASE, environ=env)["run"]["tolerances"]["holonomy"] == 1e-7


@pytest.mark.parametrize("env", [{ENV_PREFIX + "NOPE": "1"}, {ENV_PREFIX + "RESIDUAL": "abc"},
                                 {ENV_PREFIX + "RESIDUAL": "-1"}])
def test_bad_env_overrides(env):
    with pytest.raises(ConfigError):
        env_overrides(env)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[]")
    with pytest.raises(ConfigError):
        load_config(arr)


def test_shipped_examples_validate():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    configs = [c for c in configs if c.name != "schema.json"]
    assert configs
    for path in configs:
        load_config(path, environ={})


def test_schema_is_serialisable():
    assert json.loads(json.dumps(SCHEMA))["additionalProperties"] is False
