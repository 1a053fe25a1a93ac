"""
Experiment Configuration

One YAML file per experiment. Every section maps onto a parameter model of
the module that consumes it; unknown keys are rejected at every level and
validation errors are reported against the dotted key that caused them.
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import yaml
from pydantic import Field, ValidationError, model_validator

from control.supervisory_control import IncPidGains
from faults import ConfigError
from learning.rpo_trainer import TrainConfig
from params import ParamsModel
from physics.flight_control import Se3Gains
from physics.world_dynamics import PhysicalParams
from task_env import EpisodeConfig, RewardParams

logger = logging.getLogger(__name__)

PID_LEVELS = ("strict", "moderate", "loose")


class EvalConfig(ParamsModel):
    """Evaluation protocol"""

    episodes: int = Field(1000, gt=0)
    duration: float = Field(10.0, gt=0)
    seed: int = 1000
    trace_samples: int = Field(3, ge=0)  # episodes exported as CSV/SVG per controller


class ExperimentConfig(ParamsModel):
    """Everything one experiment needs, with defaults for every key"""

    name: str = "experiment"
    output_dir: str = "runs"
    seeds: List[int] = Field(default_factory=lambda: [0])

    physics: PhysicalParams = Field(default_factory=PhysicalParams)
    gains: Se3Gains = Field(default_factory=Se3Gains)
    reward: RewardParams = Field(default_factory=RewardParams)
    episode: EpisodeConfig = Field(default_factory=EpisodeConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    # One preset per velocity constraint level; tune-pid searches around them
    pid_strict: IncPidGains = IncPidGains(K_p=100.0, T_i=0.6, T_d=0.6)
    pid_moderate: IncPidGains = IncPidGains(K_p=100.0, T_i=0.8, T_d=0.8)
    pid_loose: IncPidGains = IncPidGains(K_p=100.0, T_i=1.2, T_d=1.2)

    compare: List[str] = Field(default_factory=lambda: ["policy", "pid:strict", "pid:moderate", "pid:loose"])

    @model_validator(mode="after")
    def _check_cross_section(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ValueError("seeds must list at least one seed")
        length = self.physics.beam_length
        if not self.episode.goal < length:
            raise ValueError(f"episode.goal {self.episode.goal} must lie inside the beam (0, {length})")
        if self.episode.init_ball_range[1] > length:
            raise ValueError(f"episode.init_ball_range {self.episode.init_ball_range} exceeds beam length {length}")
        for phase in self.train.curriculum.phases:
            if not phase.e_goal < self.reward.e_max:
                raise ValueError(f"curriculum e_goal {phase.e_goal} must be below reward.e_max {self.reward.e_max}")
        return self

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def pid_gains(self, level: str) -> IncPidGains:
        if level not in PID_LEVELS:
            raise ConfigError(f"no PID preset for constraint level {level!r}", key="controller")
        return getattr(self, f"pid_{level}")

    def eval_episode(self) -> EpisodeConfig:
        """Training episode settings with the evaluation length and no reset exclusion"""
        return self.episode.model_copy(update={"duration": self.eval.duration, "init_exclusion": None})


def _dotted(loc: Sequence[Union[str, int]]) -> str:
    return ".".join(str(part) for part in loc if part != "__root__")


def validation_to_config_error(exc: ValidationError) -> ConfigError:
    """First pydantic error as a ConfigError naming its dotted key"""
    first = exc.errors()[0]
    key = _dotted(first["loc"]) or None
    message = first["msg"]
    extra = len(exc.errors()) - 1
    if extra:
        message += f" (and {extra} more error{'s' if extra > 1 else ''})"
    return ConfigError(message, key=key)


def build_config(data: Optional[dict]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as e:
        raise validation_to_config_error(e) from e


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate an experiment file; an empty file gives every default"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    config = build_config(data)
    logger.debug(f"Loaded config {path} ({config.name})")
    return config


def apply_overrides(config: ExperimentConfig, assignments: Sequence[str]) -> ExperimentConfig:
    """Apply key=value overrides (YAML-typed values) and re-validate"""
    data = config.model_dump(mode="python")
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value {raw!r}: {e}", key=key) from e

        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError("unknown section", key=key)
            node = node[part]
        node[parts[-1]] = value
    return build_config(data)


def _canonical(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved config"""
    payload = json.dumps(_canonical(config.model_dump(mode="python")), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()
