"""YAML run configuration: ``model``, ``train`` and ``data`` sections."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..tracker import TrackerConfig
from .benchmark import SPLITS, generate_split, load_benchmark, split_counts
from .training import TrainConfig


@dataclass
class DataConfig:
    seed: int = 0
    n_train: int = 40
    n_test: int = 10
    train_mix: list[str] = field(default_factory=lambda: list(SPLITS))
    test_mix: list[str] = field(default_factory=lambda: ["easy", "low_light"])
    n_frames: int = 30
    root: str | None = None

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise ValueError("sequence counts must be positive")
        for s in list(self.train_mix) + list(self.test_mix):
            if s not in SPLITS:
                raise ValueError(f"unknown split {s!r}")


@dataclass
class RunConfig:
    model: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": dataclasses.asdict(self.data)}


def _section(raw: dict, key: str) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ValueError(f"config section {key!r} must be a mapping")
    return sec


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    data = _section(raw, "data")
    known = {f.name for f in dataclasses.fields(DataConfig)}
    if set(data) - known:
        raise ValueError(f"unknown data keys: {sorted(set(data) - known)}")
    return RunConfig(TrackerConfig.from_dict(_section(raw, "model")),
                     TrainConfig.from_dict(_section(raw, "train")), DataConfig(**data))


def load_config(path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def make_datasets(data: DataConfig):
    """(train, test) sequence lists, loaded from ``data.root`` or generated in memory."""
    if data.root is not None:
        return load_benchmark(data.root, "train"), load_benchmark(data.root, "test")
    out = []
    for subset, total, mix in (("train", data.n_train, data.train_mix), ("test", data.n_test, data.test_mix)):
        seqs = []
        for split, count in split_counts(total, list(mix)).items():
            seqs += generate_split(data.seed, subset, split, count, data.n_frames)
        out.append(seqs)
    return out[0], out[1]
