"""Harness configuration: dataclasses plus a diff-friendly key=value file
format (INI-style sections) with JSON equally accepted."""

from __future__ import annotations

import configparser
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class RewardConfig:
    epsilon: float = 0.2
    group_size: int = 8
    multi_step_scoring: str = "final"  # final | per_step


@dataclass
class DataConstructConfig:
    k: int = 10
    retrieved_count: int = 5
    seed: int = 0


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0


@dataclass
class ServiceConfig:
    bind_address: str = "127.0.0.1:8300"
    max_concurrent: int = 64


@dataclass
class Config:
    registry_path: str = ""
    dataset_paths: dict = field(default_factory=dict)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dataconstruct: DataConstructConfig = field(default_factory=DataConstructConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def validate(self, *, check_paths: bool = True) -> None:
        if self.reward.epsilon <= 0:
            raise ConfigError("reward.epsilon must be > 0")
        if self.reward.group_size < 2:
            raise ConfigError("reward.group_size must be >= 2")
        if self.reward.multi_step_scoring not in ("final", "per_step"):
            raise ConfigError("reward.multi_step_scoring must be 'final' or 'per_step'")
        if self.dataconstruct.k < 1:
            raise ConfigError("dataconstruct.k must be >= 1")
        if self.dataconstruct.retrieved_count < 0:
            raise ConfigError("dataconstruct.retrieved_count must be >= 0")
        if self.losses.alpha < 0 or self.losses.beta < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.service.max_concurrent < 1:
            raise ConfigError("service.max_concurrent must be >= 1")
        if check_paths:
            for label, path in [("registry_path", self.registry_path)] + [
                (f"datasets.{split}", p) for split, p in self.dataset_paths.items()
            ]:
                if path and not Path(path).exists():
                    raise ConfigError(f"{label}: no such file: {path}")


def render_config(config: Config) -> str:
    """Line-oriented key = value rendering with section headers."""
    parser = configparser.ConfigParser()
    parser["paths"] = {"registry_path": config.registry_path}
    parser["datasets"] = {k: v for k, v in sorted(config.dataset_paths.items())}
    parser["reward"] = {
        "epsilon": repr(config.reward.epsilon),
        "group_size": str(config.reward.group_size),
        "multi_step_scoring": config.reward.multi_step_scoring,
    }
    parser["dataconstruct"] = {
        "k": str(config.dataconstruct.k),
        "retrieved_count": str(config.dataconstruct.retrieved_count),
        "seed": str(config.dataconstruct.seed),
    }
    parser["losses"] = {"alpha": repr(config.losses.alpha), "beta": repr(config.losses.beta)}
    parser["service"] = {
        "bind_address": config.service.bind_address,
        "max_concurrent": str(config.service.max_concurrent),
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def _from_json_obj(obj: dict) -> Config:
    try:
        return Config(
            registry_path=obj.get("registry_path", ""),
            dataset_paths=dict(obj.get("datasets", {})),
            reward=RewardConfig(**obj.get("reward", {})),
            dataconstruct=DataConstructConfig(**obj.get("dataconstruct", {})),
            losses=LossConfig(**obj.get("losses", {})),
            service=ServiceConfig(**obj.get("service", {})),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc


def parse_config(text: str) -> Config:
    """Parse either format; JSON when the first non-blank character is '{'."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return _from_json_obj(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    config = Config()
    try:
        if parser.has_section("paths"):
            config.registry_path = parser.get("paths", "registry_path", fallback="")
        if parser.has_section("datasets"):
            config.dataset_paths = dict(parser.items("datasets"))
        if parser.has_section("reward"):
            config.reward.epsilon = parser.getfloat("reward", "epsilon", fallback=config.reward.epsilon)
            config.reward.group_size = parser.getint(
                "reward", "group_size", fallback=config.reward.group_size
            )
            config.reward.multi_step_scoring = parser.get(
                "reward", "multi_step_scoring", fallback=config.reward.multi_step_scoring
            )
        if parser.has_section("dataconstruct"):
            config.dataconstruct.k = parser.getint("dataconstruct", "k", fallback=config.dataconstruct.k)
            config.dataconstruct.retrieved_count = parser.getint(
                "dataconstruct", "retrieved_count", fallback=config.dataconstruct.retrieved_count
            )
            config.dataconstruct.seed = parser.getint(
                "dataconstruct", "seed", fallback=config.dataconstruct.seed
            )
        if parser.has_section("losses"):
            config.losses.alpha = parser.getfloat("losses", "alpha", fallback=config.losses.alpha)
            config.losses.beta = parser.getfloat("losses", "beta", fallback=config.losses.beta)
        if parser.has_section("service"):
            config.service.bind_address = parser.get(
                "service", "bind_address", fallback=config.service.bind_address
            )
            config.service.max_concurrent = parser.getint(
                "service", "max_concurrent", fallback=config.service.max_concurrent
            )
    except ValueError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return config


def load_config(path: str | Path, *, check_paths: bool = True) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    config = parse_config(text)
    config.validate(check_paths=check_paths)
    return config


def config_to_json(config: Config) -> dict:
    return {
        "registry_path": config.registry_path,
        "datasets": dict(config.dataset_paths),
        "reward": asdict(config.reward),
        "dataconstruct": asdict(config.dataconstruct),
        "losses": asdict(config.losses),
        "service": asdict(config.service),
    }
