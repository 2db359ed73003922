import json

import pytest
from hypothesis import given, strategies as st

from varswap.config import load_config, parse_config
from varswap.errors import ConfigError
from varswap.sde_sim import Scheme

BASE = {
    "model": {"family": "BlackScholes", "s0": 100.0, "sigma": 0.2},
    "grid": {"T": 1.0, "n": 252},
    "mc": {"n_paths": 1000, "seed": 7, "scheme": "EulerFullTruncation", "workers": 2},
    "output": {"formats": ["json"]},
    "options": {"annualize": True},
}


def test_parse_full_config():
    cfg = parse_config(BASE)
    assert cfg.grid.T == 1.0 and cfg.grid.n == 252
    assert cfg.mc.scheme is Scheme.EULER and cfg.mc.workers == 2
    assert cfg.output.formats == ("json",)
    assert cfg.options == {"annualize": True}


def test_defaults():
    cfg = parse_config({"model": BASE["model"]})
    assert cfg.mc.n_paths == 100_000 and cfg.mc.seed == 0 and cfg.mc.scheme is Scheme.EXACT
    assert cfg.output.formats == ("csv", "json")


@pytest.mark.parametrize(
    "patch, key",
    [
        ({"extra": {}}, "config.extra"),
        ({"grid": {"T": 1.0, "N": 4}}, "grid.N"),
        ({"mc": {"paths": 4}}, "mc.paths"),
        ({"output": {"dir": "x"}}, "output.dir"),
        ({"options": {"lamdas": [1]}}, "options.lamdas"),
    ],
)
def test_unknown_keys_named(patch, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config({**BASE, **patch})


@pytest.mark.parametrize(
    "patch",
    [
        {"grid": {"T": -1.0}},
        {"grid": {"n": 0}},
        {"grid": {"n": 2.5}},
        {"grid": {"n_list": []}},
        {"mc": {"n_paths": 1}},
        {"mc": {"seed": -3}},
        {"mc": {"seed": 2**64}},
        {"mc": {"scheme": "Milstein"}},
        {"mc": {"workers": True}},
        {"output": {"formats": ["xml"]}},
        {"options": {"variant": "other"}},
        {"options": {"override": "yes"}},
        {"model": {"family": "BlackScholes", "sigma": "high"}},
    ],
)
def test_invalid_values(patch):
    with pytest.raises(ConfigError):
        parse_config({**BASE, **patch})


def test_hash_ignores_workers_and_output():
    a = parse_config(BASE)
    b = parse_config({**BASE, "mc": {**BASE["mc"], "workers": 8}, "output": {"directory": "elsewhere"}})
    c = parse_config({**BASE, "mc": {**BASE["mc"], "seed": 8}})
    assert a.hash == b.hash
    assert a.hash != c.hash


@given(st.integers(0, 2**64 - 1), st.integers(2, 10**7), st.floats(0.01, 30.0))
def test_round_trip_through_dict(seed, paths, T):
    raw = {**BASE, "mc": {"n_paths": paths, "seed": seed}, "grid": {"T": T, "n": 4}}
    cfg = parse_config(raw)
    again = parse_config(cfg.to_dict())
    assert again == cfg and again.hash == cfg.hash


def test_load_toml_and_json(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('[model]\nfamily = "BlackScholes"\ns0 = 100.0\nsigma = 0.2\n[grid]\nT = 1.0\nn = 4\n')
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"model": BASE["model"], "grid": {"T": 1.0, "n": 4}}))
    assert load_config(toml) == load_config(js)
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
