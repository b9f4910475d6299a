"""Run-config files: TOML or JSON, sections mirroring the config dataclasses."""
import json
import os
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

SEED_ENV = "SELFIR_SEED"


class ConfigFileError(ValueError):
    pass


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigFileError(f"invalid config {path}: {exc}") from exc


def merge(base, override):
    """Recursive dict merge; ``override`` wins, None values are ignored."""
    out = dict(base)
    for key, val in override.items():
        if val is None:
            continue
        if isinstance(val, dict):
            out[key] = merge(out.get(key) if isinstance(out.get(key), dict) else {}, val)
        else:
            out[key] = val
    return out


def env_seed(default=None):
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigFileError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def snapshot(cfg_dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg_dict, indent=2, sort_keys=True))
    return path
