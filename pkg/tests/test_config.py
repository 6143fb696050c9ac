import json

import pytest

from jointpred.config import PRESETS, ConfigError, ExperimentConfig, preset


def test_variant_defaults():
    assert ExperimentConfig(variant="anchor_transformer").anchor_layers == 2
    assert ExperimentConfig(variant="cvae").beta == 0.05
    assert ExperimentConfig(variant="joint_loss").beta is None


@pytest.mark.parametrize(
    "kw, msg",
    [
        ({"variant": "gan"}, "variant"),
        ({"variant": "joint_loss", "beta": 0.1}, "beta"),
        ({"variant": "cvae", "anchor_layers": 1}, "anchor_layers"),
        ({"dim": 30, "heads": 4}, "multiple"),
        ({"k": 0}, "k must"),
        ({"lr_initial": 0.0}, "learning rates"),
        ({"variant": "cvae", "beta": -1.0}, "beta"),
    ],
)
def test_validation(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig(**kw)


def test_digest_is_stable_and_sensitive():
    a = ExperimentConfig(variant="multi_mlp", seed=3)
    assert a.digest == ExperimentConfig(variant="multi_mlp", seed=3).digest
    assert a.digest != a.replace(seed=4).digest
    assert len(a.digest) == 16


def test_round_trip_through_json(tmp_path):
    a = preset("cvae_large_beta", seed=7)
    p = tmp_path / "c.json"
    p.write_text(a.canonical_json())
    assert ExperimentConfig.load(p) == a


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"variant": "cvae", "temperature": 1.0})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    p = tmp_path / "list.json"
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError, match="object"):
        ExperimentConfig.load(p)


def test_presets():
    assert set(PRESETS) >= {"desk", "paper", "cvae_small_beta", "cvae_large_beta"}
    assert preset("paper").dim == 128
    assert preset("cvae_small_beta").beta == 0.05 and preset("cvae_large_beta").beta == 0.5
    assert preset("desk", variant="cvae").t_future == 30
    with pytest.raises(ConfigError):
        preset("huge")
