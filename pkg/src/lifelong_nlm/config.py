"""Experiment configuration: defaults, key=value files, CLI overrides.

Precedence is CLI > config file > defaults, where the defaults themselves
depend on the domain and on --paper-scale (desk-scale sizes keep CI fast;
paper-scale sizes reproduce the reported setup).  Unknown keys are
rejected, and every run directory receives a fully resolved copy of its
configuration plus the tool version, sufficient to reproduce the run
byte-for-byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from . import __version__

OUTPUT_ENV_VAR = "LIFELONG_NLM_OUT"


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    command: str = ""
    domain: str = "graph"
    mode: str = "lifelong"
    replay: str = "off"
    seeds: str = "4"  # a count, or a comma-separated list of seed values
    seed: int = 0
    paper_scale: bool = False
    out_dir: str = ""
    name: str = ""
    resume: bool = False
    workers: int = 1  # seeds fan out to this many processes
    # dataset sizes
    train_count: int = 16
    test_count: int = 4
    # supervised training
    epochs_per_task: int = 50
    batch_size: int = 1
    learning_rate: float = 0.001
    eval_every: int = 1
    kb_depth: int = 4
    kb_breadth: str = "8,8,8,8"
    head_breadth: str = "8,8,8,8"
    include_base_in_head: bool = True
    pos_weight_cap: float = 20.0
    # blocksworld collection
    task: int = 0
    n_blocks: int = 3
    transitions: int = 5000
    epsilon: float = 0.8
    max_steps: int = 50
    # offline RL
    buffers_dir: str = ""
    actor_lr: float = 0.003
    critic_lr: float = 0.003
    tau: float = 0.05
    actor_period: int = 20
    temperature: float = 1.5
    gamma: float = 0.99
    rl_batch_size: int = 32
    grad_steps: int = 10000
    rl_eval_every: int = 1000
    eval_episodes: int = 10
    rl_kb_breadth: str = "4,4,4,4"
    # eval / metrics / report inputs
    checkpoint: str = ""
    data_path: str = ""
    metrics_path: str = ""
    episodes: int = 20

    def seed_list(self) -> tuple[int, ...]:
        text = self.seeds.strip()
        if "," in text:
            return tuple(int(s) for s in text.split(",") if s != "")
        return tuple(range(int(text)))

    def ints(self, key: str) -> tuple[int, ...]:
        return tuple(int(d) for d in getattr(self, key).split(","))


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = _FIELDS[key].type
    raw = value.strip()
    if kind == "bool" or isinstance(_FIELDS[key].default, bool):
        if raw not in ("0", "1", "true", "false"):
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return raw in ("1", "true")
    if isinstance(_FIELDS[key].default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(_FIELDS[key].default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def read_config_file(path: str) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip()
            if key == "version":  # resolved configs carry the tool version
                continue
            values[key] = _coerce(key, value)
    return values


def _scale_defaults(command: str, domain: str, paper_scale: bool) -> dict:
    out: dict = {}
    if domain == "arithmetic":
        out["train_count"] = 8
        out["test_count"] = 2
    if paper_scale:
        out["n_blocks"] = 6
        out["transitions"] = 50_000
    return out


def resolve_config(command: str, file_values: dict, cli_values: dict) -> ExperimentConfig:
    """Defaults (domain/scale aware) < config file < command line."""
    merged: dict = {"command": command}
    domain = cli_values.get("domain", file_values.get("domain", ExperimentConfig.domain))
    paper = cli_values.get(
        "paper_scale", file_values.get("paper_scale", ExperimentConfig.paper_scale)
    )
    merged.update(_scale_defaults(command, domain, paper))
    merged.update(file_values)
    merged.update(cli_values)
    merged["command"] = command  # a resolved config names its own command
    for key in merged:
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
    cfg = ExperimentConfig(**merged)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.domain not in ("arithmetic", "tree", "graph"):
        raise ConfigError(f"domain: unknown domain {cfg.domain!r}")
    if cfg.mode not in ("lifelong", "individual"):
        raise ConfigError(f"mode: must be lifelong or individual, got {cfg.mode!r}")
    if cfg.replay not in ("on", "off"):
        raise ConfigError(f"replay: must be on or off, got {cfg.replay!r}")
    if cfg.replay == "on" and cfg.mode != "lifelong":
        raise ConfigError("replay: only valid in lifelong mode")
    try:
        cfg.seed_list()
    except ValueError:
        raise ConfigError(f"seeds: expected a count or comma list, got {cfg.seeds!r}") from None
    for key in ("kb_breadth", "head_breadth", "rl_kb_breadth"):
        parts = getattr(cfg, key).split(",")
        if len(parts) != 4 or not all(p.strip().isdigit() for p in parts):
            raise ConfigError(f"{key}: expected four comma-separated counts")
    if not 0 <= cfg.epsilon <= 1:
        raise ConfigError(f"epsilon: must be in [0, 1], got {cfg.epsilon}")
    if not 0 < cfg.tau <= 1:
        raise ConfigError(f"tau: must be in (0, 1], got {cfg.tau}")


def output_root(cfg: ExperimentConfig) -> str:
    if cfg.out_dir:
        return cfg.out_dir
    return os.environ.get(OUTPUT_ENV_VAR, "runs")


def resolved_text(cfg: ExperimentConfig) -> str:
    lines = [f"version={__version__}"]
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = int(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
