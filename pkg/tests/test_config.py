from pathlib import Path

import numpy as np
import pytest

from rigidlab.config import ExperimentConfig, PipelineConfig, config_from_dict, load_config
from rigidlab.errors import ConfigError
from rigidlab.families import build_family

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.yaml"))


def test_configs_exist():
    assert len(CONFIGS) >= 5


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.manifold in ("sphere", "flat_torus")


def test_defaults():
    cfg = config_from_dict(None)
    assert cfg.manifold == "sphere" and cfg.seed == 0 and cfg.p == 2.0
    r = cfg.pipeline.resolved(np.pi)
    assert r.clamp_bound == pytest.approx(10 * np.sqrt(2))
    assert (r.delta1, r.delta0, r.log_radius) == pytest.approx((np.pi / 8, np.pi / 16, np.pi / 2))


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"family": {"kinds": "identity"}},
        {"pipeline": {"p_value": 2}},
        {"heatflow": {"every": 2}},
        {"nullspace": "yes"},
    ],
)
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


@pytest.mark.parametrize(
    "data",
    [
        {"manifold": "cube"},
        {"resolution": 9},
        {"manifold": "flat_torus", "resolution": 2},
        {"seed": -1},
        {"family": {"kind": "torus_double"}},
        {"family": {"field": "shear"}},
        {"manifold": "flat_torus", "family": {"field": "conformal"}},
        {"family": {"count": 0}},
        {"family": {"epsilons": []}},
        {"family": {"epsilons": [1.0]}},
        {"family": {"field_scale": 2.0}},
        {"pipeline": {"p": 1.0}},
        {"pipeline": {"p": 12}},
        {"pipeline": {"clamp_bound": 1.2}},
        {"pipeline": {"t1": 0}},
        {"pipeline": {"scheme": "explicit"}},
        {"pipeline": {"delta1": 4.0}},
        {"heatflow": {"monitor_every": 0}},
        {"nullspace": {"gap": 1.5}},
        {"nullspace": {"n_eigs": 1}},
    ],
)
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("manifold: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_round_trip_through_dict():
    cfg = config_from_dict({"manifold": "flat_torus", "resolution": 12, "family": {"kind": "torus_double"}})
    again = config_from_dict(cfg.to_dict())
    assert again == cfg


def test_pipeline_config_validate_direct():
    with pytest.raises(ConfigError):
        PipelineConfig(log_radius=0.0).validate()


# -- families ----------------------------------------------------------------

def test_family_is_seeded():
    data = {"resolution": 2, "seed": 4, "family": {"count": 3, "epsilons": [0.05]}}
    a = build_family(config_from_dict(data))
    b = build_family(config_from_dict(data))
    assert [m.map_id for m in a] == ["random_smooth_00", "random_smooth_01", "random_smooth_02"]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.map.images, y.map.images)
    c = build_family(config_from_dict({**data, "seed": 5}))
    assert not np.array_equal(a[0].map.images, c[0].map.images)


def test_family_members_are_independent_of_count():
    base = {"resolution": 2, "family": {"count": 1}}
    one = build_family(config_from_dict(base))
    three = build_family(config_from_dict({**base, "family": {"count": 3}}))
    np.testing.assert_array_equal(one[0].map.images, three[0].map.images)


@pytest.mark.parametrize(
    "manifold,kind,field",
    [
        ("sphere", "identity", "random"),
        ("sphere", "constant", "random"),
        ("sphere", "isometry", "random"),
        ("sphere", "killing", "random"),
        ("sphere", "random_smooth", "conformal"),
        ("flat_torus", "torus_double", "random"),
        ("flat_torus", "random_smooth", "shear"),
    ],
)
def test_family_kinds(manifold, kind, field):
    res = 2 if manifold == "sphere" else 12
    cfg = config_from_dict({"manifold": manifold, "resolution": res, "family": {"kind": kind, "field": field, "count": 2}})
    fam = build_family(cfg)
    assert fam and all(m.map.mesh.resolution == res for m in fam)
    assert all(m.map.constraint_residual() < 1e-12 for m in fam)
