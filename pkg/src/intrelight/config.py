"""Run configuration: one JSON file holding model, training and augmentation settings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .augment import AugmentConfig
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = ("model", "train", "augment", "dataset", "out_dir")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""
    out_dir: str = "runs/default"

    @property
    def augment(self) -> AugmentConfig:
        return self.train.augment

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        augment = train.pop("augment")
        train.pop("dataset")
        return {
            "model": self.model.to_dict(),
            "train": train,
            "augment": augment,
            "dataset": self.dataset,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        train = dict(data.get("train", {}))
        for key in ("augment", "dataset"):
            if key in train:
                raise ValueError(f"'{key}' belongs at the top level of the config, not under 'train'")
        augment = AugmentConfig.from_dict(data.get("augment", {}))
        dataset = str(data.get("dataset", ""))
        return cls(
            model=ModelConfig.from_dict(data.get("model", {})),
            train=TrainConfig.from_dict({**train, "augment": augment, "dataset": dataset}),
            dataset=dataset,
            out_dir=str(data.get("out_dir", "runs/default")),
        )

    def with_overrides(self, **train_overrides) -> "RunConfig":
        return replace(self, train=replace(self.train, **train_overrides))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be an object")
        return cls.from_dict(data)
