import json

import pytest

from ctap.config import ConfigError, RunConfig, load_config, parse_config, save_config, subseed


def test_defaults():
    cfg = RunConfig()
    assert cfg.pate.theta_a == 0.1 and cfg.pate.theta_c == 0.5
    assert cfg.tar.n_ctl == 4 and cfg.tar.n_ctx == 4
    assert cfg.actionness.train.lr == 0.005 and cfg.actionness.train.batch_size == 128
    assert cfg.final_nms is None and cfg.mode == "ctap"
    assert cfg.pate.label_folds == 1


@pytest.mark.parametrize(
    "doc,path",
    [
        ({"pate": {"theta_a": 1.5}}, "pate.theta_a"),
        ({"tar": {"n_ctx": 3}}, "tar.n_ctx"),
        ({"actionness": {"k": 2}}, "actionness.k"),
        ({"windows": {"lengths": [32, 16]}}, "windows.lengths"),
        ({"synth": {"units_range": [10, 5]}}, "synth.units_range"),
        ({"mode": "bogus"}, "mode"),
        ({"tar": {"nctx": 4}}, "tar.nctx"),
        ({"tag": {"tau_init": 0.5, "tau_max": 0.2}}, "tag"),
    ],
)
def test_rejections_name_field_path(doc, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert path in str(exc.value)


def test_round_trip_and_digest(tmp_path):
    cfg = parse_config({"seed": 5, "tar": {"d_m": 16}})
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.digest() == cfg.digest()
    assert load_config(tmp_path / "c.json", seed=6).seed == 6
    assert parse_config({"seed": 6}).digest() != RunConfig().digest()


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_subseeds_are_stable_and_independent():
    assert subseed(0, "train-tar") == subseed(0, "train-tar")
    assert subseed(0, "train-tar") != subseed(0, "train-pate")
    assert subseed(0, "train-tar") != subseed(1, "train-tar")
    cfg = RunConfig(seed=3)
    assert cfg.subseed("gen-synth") == subseed(3, "gen-synth")
    assert 0 <= subseed(123, "x") < 2**64


def test_canonical_json_is_sorted():
    doc = json.loads(RunConfig().canonical_json())
    assert list(doc) == sorted(doc)
