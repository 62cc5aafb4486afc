"""Declarative experiment configuration.

One JSON file per experiment; CLI flags override individual keys via dotted
paths ("trainer.gamma=0.95"). The resolved config is echoed into the output
directory so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..action_index import IndexTier
from ..ddpg import TrainerConfig

DEFAULT_EVALUATION = {"every_steps": 5000, "episodes": 20}


@dataclass
class ExperimentConfig:
    environment: dict = field(default_factory=dict)
    policy: dict = field(default_factory=lambda: {"k": 1, "tier": "exact", "refine": True})
    trainer: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=lambda: dict(DEFAULT_EVALUATION))
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if "name" not in self.environment:
            raise ValueError("environment config needs a 'name'")
        merged_eval = dict(DEFAULT_EVALUATION)
        merged_eval.update(self.evaluation)
        self.evaluation = merged_eval
        self.policy.setdefault("k", 1)
        self.policy.setdefault("tier", "exact")
        self.policy.setdefault("refine", True)
        IndexTier(self.policy["tier"])  # validates
        self.trainer_config()  # validates trainer keys eagerly

    def trainer_config(self) -> TrainerConfig:
        known = set(TrainerConfig.__dataclass_fields__)
        unknown = set(self.trainer) - known
        if unknown:
            raise ValueError(f"unknown trainer keys: {sorted(unknown)}")
        return TrainerConfig(**self.trainer)

    def to_dict(self) -> dict:
        return {
            "environment": copy.deepcopy(self.environment),
            "policy": copy.deepcopy(self.policy),
            "trainer": copy.deepcopy(self.trainer),
            "evaluation": copy.deepcopy(self.evaluation),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"environment", "policy", "trainer", "evaluation", "seed", "out_dir"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(data))

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_json(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def with_overrides(self, overrides: list[str]) -> "ExperimentConfig":
        """Apply "dotted.key=value" overrides; values parse as JSON when
        possible, else as bare strings."""
        data = self.to_dict()
        for spec in overrides:
            key, sep, raw = spec.partition("=")
            if not sep:
                raise ValueError(f"override {spec!r} is not of the form key=value")
            try:
                value: Any = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    node[part] = {}
                node = node[part]
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(data)
