"""Run configuration: one JSON document per experiment.

Schema (all keys optional except ``task``)::

    {
      "task": "pass",
      "env": {"horizon": 300, "geometry": {...}},
      "reward": {"alpha": 10, "beta": 0.1},
      "learner": {"learning_rate": 0.02, "step_budget": 2000000, ...},
      "provider": {"kind": "fixture", "fixture_path": "fixtures/pass.json"},
      "discriminators": null,
      "use_key_states": true,
      "one_branch": false,
      "task_config": null,
      "output_dir": "runs/pass",
      "seeds": [0, 1, 2, 3, 4]
    }

Relative paths are resolved against the config file's directory.  A
``discriminators`` path, when set, is loaded instead of asking the provider.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .dsl import DiscriminatorSet
from .envs import EnvSpec, default_spec
from .learner import ConfigError, LearnerConfig
from .llm_bridge import ProviderConfig
from .shir import RewardConfig

DEFAULT_CONFIGS = ("pass", "secret_room", "push_box", "large_pass", "river")


@dataclass
class RunConfig:
    task: str = "pass"
    env: dict = field(default_factory=dict)
    reward: RewardConfig = field(default_factory=RewardConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    provider: ProviderConfig | None = None
    discriminators: str | None = None
    use_key_states: bool = True
    one_branch: bool = False
    task_config: str | None = None
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    base_dir: str = field(default=".", compare=False, repr=False)

    def validate(self) -> None:
        self.env_spec()
        self.learner.validate()
        if self.provider is not None:
            try:
                self.provider.validate()
            except ValueError as exc:
                raise ConfigError(f"provider: {exc}") from exc
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if self.use_key_states and self.provider is None and self.discriminators is None:
            raise ConfigError("use_key_states needs a provider or a discriminators file")

    def env_spec(self) -> EnvSpec:
        try:
            return default_spec(self.task, **copy.deepcopy(self.env))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"env: {exc}") from exc

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_discriminators(self) -> DiscriminatorSet | None:
        if not self.use_key_states or self.discriminators is None:
            return None
        return DiscriminatorSet.from_dict(json.loads(self.resolve(self.discriminators).read_text()))

    def provider_config(self) -> ProviderConfig | None:
        if self.provider is None:
            return None
        cfg = copy.copy(self.provider)
        if cfg.fixture_path:
            cfg.fixture_path = str(self.resolve(cfg.fixture_path))
        return cfg

    def to_dict(self) -> dict:
        """Effective config; ``from_dict`` on this reproduces the run."""
        out = {
            "task": self.task,
            "env": copy.deepcopy(self.env),
            "reward": asdict(self.reward),
            "learner": asdict(self.learner),
            "provider": asdict(self.provider) if self.provider else None,
            "discriminators": self.discriminators,
            "use_key_states": self.use_key_states,
            "one_branch": self.one_branch,
            "task_config": self.task_config,
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
        }
        if self.provider and self.provider.fixture_path:
            out["provider"]["fixture_path"] = str(self.resolve(self.provider.fixture_path))
        if self.discriminators:
            out["discriminators"] = str(self.resolve(self.discriminators))
        return out

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = dict(data)
        try:
            kw["reward"] = RewardConfig(**_checked(kw.get("reward", {}), RewardConfig, "reward"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"reward: {exc}") from exc
        kw["learner"] = LearnerConfig.from_dict(kw.get("learner", {}))
        if kw.get("provider") is not None:
            try:
                kw["provider"] = ProviderConfig(**_checked(kw["provider"], ProviderConfig, "provider"))
            except TypeError as exc:
                raise ConfigError(f"provider: {exc}") from exc
        if not isinstance(kw.get("env", {}), dict):
            raise ConfigError("env must be an object")
        cfg = cls(**kw, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=path.parent)


def _checked(section, cls, name: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = sorted(set(section) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"unknown {name} key(s): {', '.join(unknown)}")
    return section


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("lemae").joinpath("data", *parts)))


def default_config(task: str) -> RunConfig:
    """Shipped configuration for one of the five tasks."""
    if task not in DEFAULT_CONFIGS:
        raise ConfigError(f"no shipped config for {task!r}; choose from {DEFAULT_CONFIGS}")
    return RunConfig.load(data_path(f"{task}.json"))
