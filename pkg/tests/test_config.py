import pytest

from selfir.config import ConfigFileError, env_seed, load_config, merge, snapshot


def test_merge_skips_none_everywhere():
    assert merge({"a": 1, "n": {"x": 1}}, {"a": None, "n": {"x": None, "y": 2}, "m": {"z": None}}) == \
        {"a": 1, "n": {"x": 1, "y": 2}, "m": {}}


def test_toml_and_json(tmp_path):
    (tmp_path / "c.toml").write_text("[train]\nseed = 3\n")
    (tmp_path / "c.json").write_text('{"train": {"seed": 4}}')
    assert load_config(tmp_path / "c.toml")["train"]["seed"] == 3
    assert load_config(tmp_path / "c.json")["train"]["seed"] == 4


def test_bad_files(tmp_path):
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[[[")
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "bad.toml")


def test_env_seed(monkeypatch):
    monkeypatch.delenv("SELFIR_SEED", raising=False)
    assert env_seed(7) == 7
    monkeypatch.setenv("SELFIR_SEED", "11")
    assert env_seed(7) == 11
    monkeypatch.setenv("SELFIR_SEED", "x")
    with pytest.raises(ConfigFileError):
        env_seed()


def test_snapshot_sorted(tmp_path):
    p = snapshot({"b": 1, "a": 2}, tmp_path / "s" / "c.json")
    assert p.read_text().index('"a"') < p.read_text().index('"b"')
