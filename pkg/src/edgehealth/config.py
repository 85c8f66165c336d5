"""Configuration loading and validation.

One TOML file drives every command. A file may pull in others through a
top-level ``include`` list (paths relative to the including file); includes
are loaded first and the including file's values win. The merged result is
validated strictly against the schema defined by the packaged defaults:
any key the tool does not know is an error naming that key, so a typo can
never silently fall back to a default.

The resolved configuration is hashed (short sha256 over a canonical JSON
dump) and that hash is stamped into every output file, tying artifacts to
the exact settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "Config", "load_config", "default_config", "config_hash"]


class ConfigError(Exception):
    """Invalid, unknown, or unparseable configuration."""


# Schema: section -> key -> expected python type. Floats accept ints.
# dict-valued entries are one level of nested table with uniform value type.
_SCHEMA = {
    "run": {"seed": int, "out_dir": str, "jobs": int},
    "signals": {
        "modalities": [str],
        "window_s": float,
        "n_windows": int,
        "wander_snr_db": float,
        "artifact_duration_s": float,
        "artifact_amplitude_scale": float,
        "artifact_on": [str],
    },
    "featurize": {"reduced": {"": int}},
    "pool": {"family": str, "n_windows": int},
    "amser": {
        "theta_noisy_db": float,
        "theta_drop_db": float,
        "hysteresis_db": float,
        "bytes_per_sample": int,
        "n_seeds": int,
        "n_windows": int,
    },
    "edgesim": {
        "app": str,
        "bandwidth_tier": str,
        "sampling_level": str,
        "policy": str,
        "users": int,
        "period_s": float,
        "duration_s": float,
        "jitter_frac": float,
        "arrival": str,
    },
    "rl": {
        "alpha": float,
        "gamma": float,
        "episodes": int,
        "eps_start": float,
        "eps_end": float,
        "max_users": int,
        "user_counts": [int],
        "eval_seeds": [int],
    },
    "calibrate": {"max_passes": int},
}


@dataclass
class Config:
    """Validated settings plus the hash that identifies them."""

    data: dict
    sha: str
    source: str = "<default>"
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.data[section]


def config_hash(data: dict) -> str:
    """Short stable digest of a resolved configuration.

    ``run.out_dir`` and ``run.jobs`` are execution details with no effect
    on artifact content, so they are excluded: the same settings produce
    the same hash whether run serially or in parallel, into any directory.
    """
    hashed = {k: dict(v) for k, v in data.items()}
    hashed.get("run", {}).pop("out_dir", None)
    hashed.get("run", {}).pop("jobs", None)
    dump = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(dump.encode("utf-8")).hexdigest()[:12]


def _check_value(dotted: str, value, expect):
    if isinstance(expect, list):
        elem = expect[0]
        if not isinstance(value, list):
            raise ConfigError("%s must be a list" % dotted)
        return [_check_value("%s[%d]" % (dotted, i), v, elem)
                for i, v in enumerate(value)]
    if isinstance(expect, dict):
        elem = expect[""]
        if not isinstance(value, dict):
            raise ConfigError("%s must be a table" % dotted)
        return {k: _check_value("%s.%s" % (dotted, k), v, elem)
                for k, v in sorted(value.items())}
    if expect is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s must be a number" % dotted)
        return float(value)
    if expect is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("%s must be an integer" % dotted)
        return int(value)
    if expect is str:
        if not isinstance(value, str):
            raise ConfigError("%s must be a string" % dotted)
        return value
    raise AssertionError("unhandled schema type %r" % (expect,))


def _validate(merged: dict, source: str) -> dict:
    out = {}
    for section, values in merged.items():
        if section not in _SCHEMA:
            raise ConfigError(
                "%s: unknown section [%s]" % (source, section)
            )
        if not isinstance(values, dict):
            raise ConfigError("%s: [%s] must be a table" % (source, section))
        out_section = {}
        for key, value in values.items():
            expect = _SCHEMA[section].get(key)
            if expect is None:
                raise ConfigError(
                    "%s: unknown key %s.%s" % (source, section, key)
                )
            out_section[key] = _check_value(
                "%s.%s" % (section, key), value, expect
            )
        out[section] = out_section
    return out


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("%s: %s" % (path, exc)) from None


def _load_raw(path: Path, seen: tuple) -> dict:
    path = path.resolve()
    if str(path) in seen:
        raise ConfigError(
            "circular include: %s" % " -> ".join(seen + (str(path),))
        )
    raw = _read_toml(path)
    includes = raw.pop("include", [])
    if not isinstance(includes, list) or not all(
        isinstance(p, str) for p in includes
    ):
        raise ConfigError("%s: include must be a list of paths" % path)
    merged: dict = {}
    for rel in includes:
        child = (path.parent / rel)
        merged = _deep_merge(merged, _load_raw(child, seen + (str(path),)))
    return _deep_merge(merged, raw)


def _defaults_raw() -> dict:
    text = (
        resources.files("edgehealth") / "data" / "default.toml"
    ).read_bytes()
    return tomllib.loads(text.decode("utf-8"))


def default_config() -> Config:
    """The packaged stock configuration."""
    data = _validate(_defaults_raw(), "<default>")
    return Config(data=data, sha=config_hash(data))


def load_config(path=None, *, seed: int | None = None,
                out_dir: str | None = None, jobs: int | None = None) -> Config:
    """Load, merge, validate, and hash a configuration.

    Starts from the packaged defaults, overlays the given file (with its
    includes) when provided, then applies the explicit overrides (command
    line flags). Unknown keys anywhere raise :class:`ConfigError`.
    """
    data = _validate(_defaults_raw(), "<default>")
    source = "<default>"
    if path is not None:
        path = Path(path)
        user = _validate(_load_raw(path, ()), str(path))
        data = _deep_merge(data, user)
        source = str(path)
    overrides = {}
    if seed is not None:
        if seed < 0:
            raise ConfigError("run.seed must be non-negative")
        data["run"]["seed"] = int(seed)
        overrides["seed"] = int(seed)
    if out_dir is not None:
        data["run"]["out_dir"] = str(out_dir)
        overrides["out_dir"] = str(out_dir)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("run.jobs must be at least 1")
        data["run"]["jobs"] = int(jobs)
        overrides["jobs"] = int(jobs)
    if data["run"]["seed"] < 0:
        raise ConfigError("run.seed must be non-negative")
    if data["run"]["jobs"] < 1:
        raise ConfigError("run.jobs must be at least 1")
    return Config(
        data=data, sha=config_hash(data), source=source, overrides=overrides
    )
