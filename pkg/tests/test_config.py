import pytest

from geomagnav.config import (FULL_PRESET, ConfigError, RunConfig, config_from_dict, load_config,
                              set_path)


@pytest.mark.parametrize("cfg", [RunConfig(), FULL_PRESET], ids=["desk", "full"])
def test_yaml_roundtrip(tmp_path, cfg):
    p = tmp_path / "c.yaml"
    p.write_text(cfg.to_yaml())
    assert load_config(str(p)) == cfg
    assert "output" not in cfg.to_yaml() and "output" in cfg.to_yaml(include_output=True)


def test_presets_are_valid():
    assert RunConfig().validate() == []
    assert FULL_PRESET.validate() == []
    assert config_from_dict({"preset": "full"}) == FULL_PRESET
    assert config_from_dict(None) == RunConfig()


def test_every_violation_is_listed():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"bogus": 1, "workers": 0, "td3": {"gamma": 1.5, "nope": 2},
                          "reward": {"zeta3": "x"}, "tasks": {"min_distance_m": 9e9},
                          "baselines": {"ga": {"population": 0}, "sa": {}},
                          "field": {"kind": "dipole"}})
    errs = exc.value.errors
    for needle in ("bogus: unknown key", "td3.nope: unknown field", "reward.zeta3: cannot interpret",
                   "baselines.sa: unknown baseline", "workers must be >= 1", "td3: gamma",
                   "baselines.ga: ga.population", "field.kind", "tasks: need"):
        assert any(needle in e for e in errs), needle
    assert len(errs) >= 9
    assert all(e in str(exc.value) for e in errs)


def test_overrides_and_optional_fields(tmp_path):
    cfg = load_config(None, [("td3.episodes", 10), ("reward.objective_cap", None),
                             ("td3.hidden", [8, 8]), ("tasks.region", "desk"), ("region", "desk")])
    assert cfg.td3.episodes == 10 and cfg.td3.hidden == (8, 8)
    assert cfg.reward.objective_cap is None
    assert cfg.task_region == cfg.region
    d = {}
    set_path(d, "a.b.c", 1)
    assert d == {"a": {"b": {"c": 1}}}
    with pytest.raises(ConfigError):
        config_from_dict({"region": {"lat_min": 0}})
    with pytest.raises(ConfigError):
        config_from_dict({"td3": {"episodes": 2.5}})


def test_heldout_tasks_follow_master_seed():
    a, b = RunConfig(seed=1), RunConfig(seed=2)
    assert a.heldout_tasks(5) == RunConfig(seed=1).heldout_tasks(5)
    assert a.heldout_tasks(5) != b.heldout_tasks(5)
    region = a.sampling_region
    assert all(region.contains(t.origin.latitude, t.origin.longitude) for t in a.heldout_tasks())
