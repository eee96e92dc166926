"""Experiment configuration files: `key = value` lines, '#' comments, [section] headers."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .meta.options import SCRIPTED
from .rl.dqn import TrainConfig
from .sim.env import resolve_data_path

MODES = ("train-low", "train-meta", "eval", "map")
SEED_ENV = "METANAV_SEED"


class ConfigFileError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    maze: str = ""
    terrain: str = ""
    output_dir: str = "runs"
    seed: int = 0
    # TrainConfig fields, flattened
    gamma: float = 0.99
    lr: float = 0.00025
    replay_capacity: int = 50_000
    burn_in: int = 2_000
    target_sync_every: int = 1_000
    batch_size: int = 32
    grad_clip: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    max_env_steps: int = 100_000
    # meta level
    option_horizon: int = 10
    options: tuple[str, ...] = ()
    # evaluation and episodes
    max_steps: int = 1000
    episodes: int = 10
    eval_seed: int = 12345
    policy: str = ""

    @property
    def env_kind(self) -> str:
        return "maze" if self.maze else "terrain"

    @property
    def env_path(self) -> str:
        return self.maze or self.terrain

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})


SECTIONS = {
    "experiment": ("mode", "maze", "terrain", "output_dir", "seed"),
    "train": tuple(f.name for f in fields(TrainConfig) if f.name != "seed"),
    "meta": ("option_horizon", "options"),
    "eval": ("max_steps", "episodes", "eval_seed", "policy"),
}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_REQUIRED = ("mode",)


def _convert(key: str, raw: str, line: int | None):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigFileError(f"{key}: expected {kind}, got {raw!r}", line) from None


def parse_config(text: str, overrides: dict | None = None, check_files: bool = True,
                 environ=None) -> ExperimentConfig:
    """Parse a config file. `overrides` (already typed or raw strings) win over file values;
    the METANAV_SEED environment variable wins over both for `seed`."""
    values: dict = {}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigFileError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigFileError(f"unknown key {key!r}", lineno)
        if section is not None and key not in SECTIONS[section]:
            raise ConfigFileError(f"key {key!r} does not belong in [{section}]", lineno)
        values[key] = _convert(key, val, lineno)
    for key, val in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigFileError(f"unknown key {key!r}")
        values[key] = _convert(key, val, None) if isinstance(val, str) else val
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV):
        values["seed"] = _convert("seed", env[SEED_ENV], None)
    for key in _REQUIRED:
        if key not in values:
            raise ConfigFileError(f"missing required key {key!r}")
    if values["mode"] not in MODES:
        raise ConfigFileError(f"mode must be one of {', '.join(MODES)}")
    if bool(values.get("maze")) == bool(values.get("terrain")):
        raise ConfigFileError("exactly one of 'maze' or 'terrain' must be set")
    cfg = ExperimentConfig(**values)
    if check_files:
        _check_files(cfg)
    return cfg


def _check_files(cfg: ExperimentConfig) -> None:
    try:
        resolve_data_path(cfg.env_path)
    except FileNotFoundError as e:
        raise ConfigFileError(str(e)) from None
    for ref in cfg.options:
        if ref not in SCRIPTED and not Path(ref).exists():
            raise ConfigFileError(f"option {ref!r} is neither builtin nor an existing file")
    if cfg.policy and not Path(cfg.policy).exists():
        raise ConfigFileError(f"policy checkpoint {cfg.policy!r} does not exist")


def _fmt(val) -> str:
    if isinstance(val, tuple):
        return ", ".join(val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every effective value, grouped by section; parse_config(dump_config(c)) == c."""
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for key in keys:
            out.append(f"{key} = {_fmt(getattr(cfg, key))}")
        out.append("")
    return "\n".join(out)


def load_config_file(path, overrides=None, check_files=True, environ=None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config(text, overrides, check_files, environ)


__all__ = ["ConfigFileError", "ExperimentConfig", "MODES", "SEED_ENV", "dump_config",
           "load_config_file", "parse_config"]
