"""Experiment configuration, loadable from a flat JSON document.

Every key is optional; ``{"variant": "baseline"}`` is a complete config.
PPO, GAE and hierarchy fields sit at the top level next to the experiment ones.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from hierppo.errors import ConfigurationError
from hierppo.hierarchy import HierarchyConfig
from hierppo.pendulum import MAX_STEPS
from hierppo.ppo import GaeConfig, PpoConfig

VARIANTS = ("baseline", "hier")


@dataclass
class ExperimentConfig:
    variant: str = "baseline"
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    total_timesteps: int = 150_000
    output_dir: str = "runs/experiment"
    eval_episodes: int = 100
    eval_seed: int = 10_000
    policy_hidden_width: int = 64
    policy_hidden_layers: int = 3
    log_std_init: float = 0.0
    workers: int = 1
    ppo: PpoConfig = field(default_factory=PpoConfig)
    gae: GaeConfig = field(default_factory=GaeConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        batch = self.ppo.num_actors * self.ppo.horizon
        if self.total_timesteps < batch:
            raise ConfigurationError(
                f"total_timesteps {self.total_timesteps} is smaller than one rollout (N*T = {batch})"
            )
        if self.eval_episodes < 0 or self.workers < 1:
            raise ConfigurationError("eval_episodes must be >= 0 and workers >= 1")
        self.ppo.check_episode_length(MAX_STEPS)

    @property
    def depth(self):
        """Hierarchy depth actually in use: 0 for the baseline."""
        return self.hierarchy.depth if self.variant == "hier" else 0

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                out.update(dataclasses.asdict(value))
            else:
                out[f.name] = value
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        sections = {"ppo": PpoConfig, "gae": GaeConfig, "hierarchy": HierarchyConfig}
        nested = {}
        for name, section in sections.items():
            names = {f.name for f in dataclasses.fields(section)}
            picked = {k: data.pop(k) for k in list(data) if k in names}
            nested[name] = section(**picked)
        top = {f.name for f in dataclasses.fields(cls)} - set(sections)
        unknown = set(data) - top
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data, **nested)

    @classmethod
    def load(cls, path, overrides=None):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a JSON object")
        data.update(overrides or {})
        return cls.from_dict(data)


def field_types():
    """Flat key -> python type, for building CLI flags."""
    types = {}
    for section in (ExperimentConfig, PpoConfig, GaeConfig, HierarchyConfig):
        for f in dataclasses.fields(section):
            if f.name in ("ppo", "gae", "hierarchy"):
                continue
            types[f.name] = f.type
    return types
