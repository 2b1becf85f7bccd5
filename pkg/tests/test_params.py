import json

import pytest

from hhvems.params import Config, config_from_dict, defaults_path, load_config, save_config


def test_shipped_defaults_match_dataclasses():
    assert load_config(defaults_path()) == Config()


def test_partial_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"cost": {"K2": 7}, "sgdm": {"K": 50}}))
    cfg = load_config(p)
    assert cfg.cost.K2 == 7.0 and isinstance(cfg.sgdm.K, int) and cfg.sgdm.K == 50
    assert cfg.cost.K1 == Config().cost.K1


def test_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown keys"):
        config_from_dict({"cost": {"K9": 1.0}})


def test_roundtrip(tmp_path):
    cfg = config_from_dict({"sim": {"Ts": 0.5}})
    save_config(cfg, tmp_path / "x.json")
    assert load_config(tmp_path / "x.json") == cfg


def test_apddp_inflation():
    c = Config().cost
    inf = c.inflated()
    f = c.apddp_inflation
    assert (inf.K3, inf.alpha_w, inf.beta_w) == pytest.approx((f * c.K3, f * c.alpha_w, f * c.beta_w))
    assert inf.K2 == c.K2
