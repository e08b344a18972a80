"""Run configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Tuples are written as
comma-separated integers (``hidden_sizes = 64, 64``); booleans as
``true``/``false``. Every run directory gets a ``config.txt`` holding the
fully resolved configuration, which is itself a valid input file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, get_type_hints

from .errors import ContractError
from .envs import ENV_NAMES
from .harness.actors import ACTOR_KINDS
from .harness.td3 import TD3Config
from .snn import LIFConfig


@dataclass
class RunConfig:
    env: str = "point_reach"
    actor: str = "spiking"
    seed: int = 0
    out_dir: str = "runs/default"
    # spiking actor
    pop_size: int = 10
    hidden_sizes: tuple[int, ...] = (256, 256)
    timesteps: int = 5
    current_decay: float = 0.5
    voltage_decay: float = 0.75
    threshold: float = 0.5
    surrogate_width: float = 0.5
    # baseline actor
    baseline_hidden: tuple[int, ...] = (256, 256)
    # TD3
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 256
    buffer_size: int = 100_000
    exploration_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    start_steps: int = 1000
    max_env_steps: int = 100_000
    critic_hidden: tuple[int, ...] = (256, 256)
    action_penalty: float = 1.0
    # cadence
    log_interval: int = 100
    eval_interval: int = 2000
    eval_episodes: int = 10
    checkpoint_interval: int = 10_000
    target_success: float = 0.0  # stop once an evaluation reaches this rate; 0 disables
    record_wall_time: bool = False

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ContractError(f"unknown env {self.env!r}; choose from {', '.join(ENV_NAMES)}")
        if self.actor not in ACTOR_KINDS:
            raise ContractError(f"unknown actor {self.actor!r}; choose from {', '.join(ACTOR_KINDS)}")
        for name in ("log_interval", "eval_interval", "checkpoint_interval", "eval_episodes", "timesteps"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        self.lif()
        self.td3()

    def lif(self) -> LIFConfig:
        return LIFConfig(self.current_decay, self.voltage_decay, self.threshold, self.surrogate_width)

    def td3(self) -> TD3Config:
        return TD3Config(**{name: getattr(self, name) for name in TD3Config.field_names()})

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw.replace("_", ""))
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    # tuple[int, ...]
    return tuple(int(part) for part in raw.split(",") if part.strip())


def parse_pairs(pairs: Iterable[tuple[str, str]], base: RunConfig | None = None) -> RunConfig:
    hints = get_type_hints(RunConfig)
    values = dataclasses.asdict(base) if base else {}
    for key, raw in pairs:
        if key not in hints:
            raise ContractError(f"unknown config key {key!r}")
        try:
            values[key] = parse_value(raw, hints[key])
        except ValueError as exc:
            raise ContractError(f"bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def parse_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the file (if any), then ``key=value`` overrides."""
    pairs = parse_text(Path(path).read_text()) if path else []
    for item in overrides:
        if "=" not in item:
            raise ContractError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return parse_pairs(pairs, RunConfig())
