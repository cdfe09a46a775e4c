import json

import pytest

from mvfnet.config import ConfigError, load_config, parse_config


def test_defaults():
    cfg = parse_config({})
    assert cfg.network.backbone.name == "tiny"
    assert cfg.network.mvf_stages == {"res2", "res3"}
    assert cfg.network.classes == 8 and cfg.network.frames == 8 and cfg.network.input_resolution == 32
    assert cfg.network.mvf.alpha == 0.5 and cfg.network.mvf.betas == (1.0, 1.0, 1.0)
    assert cfg.train.base_lr == 0.01 and cfg.train.momentum == 0.9 and cfg.train.weight_decay == 1e-4
    assert cfg.train.epochs == 30 and cfg.train.train_clips == 2000
    assert cfg.eval.clips_per_video == 1 and cfg.eval.crops == "center1"
    assert cfg.task.kind == "full_eight"


def test_sections_apply():
    cfg = parse_config({
        "network": {"mvf_stages": [], "frames": 4},
        "mvf": {"alpha": 0.25, "beta_h": 0, "beta_w": 0},
        "train": {"epochs": 3, "decay_epochs": [2]},
        "eval": {"clips_per_video": 2, "crops": "three", "videos": 10},
        "task": {"kind": "direction_lr", "noise_std": 0.1},
    })
    assert cfg.network.mvf_stages == frozenset() and cfg.network.frames == 4 and cfg.task.frames == 4
    assert cfg.network.classes == 2
    assert cfg.network.mvf.betas == (1.0, 0, 0)
    assert cfg.train.decay_epochs == (2,)
    assert cfg.eval.views == 6 and cfg.eval_videos == 10


@pytest.mark.parametrize("doc", [
    {"netwrok": {}},
    {"network": {"alpha": 0.5}},
    {"mvf": {"alpha": 0.5, "gamma": 1}},
    {"train": {"lr": 0.1}},
    {"task": {"kind": "full_eight", "colour": "red"}},
    {"eval": {"views": 3}},
])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


@pytest.mark.parametrize("doc", [
    {"mvf": {"alpha": 2}},
    {"task": {"kind": "spiral"}},
    {"network": {"classes": 5}},
    {"network": {"backbone": "r50"}},
    {"network": {"frames": 8}, "task": {"frames": 6}},
    {"train": {"decay_epochs": [3, 2]}},
    {"network": {"mvf_stages": "res2"}},
    {"eval": {"crops": "five"}},
    [],
])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 1}}))
    assert load_config(p).train.epochs == 1
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_to_dict_roundtrip():
    cfg = parse_config({"mvf": {"alpha": 0.25}, "train": {"epochs": 2, "decay_epochs": [1]}})
    d = cfg.to_dict()
    again = parse_config(d)
    assert again == cfg
