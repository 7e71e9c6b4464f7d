"""Run configuration: one JSON file drives every CLI command.

Unknown keys anywhere in the tree are rejected, and every command writes
its fully resolved configuration next to its outputs, so a run can be
reproduced from its output directory alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec, spec_from_dict, spec_to_dict
from .errors import ConfigurationError
from .model import ModelConfig
from .train import TrainConfig

_SECTIONS = ("seed", "model", "train", "data", "paths")
_PATH_KEYS = ("train_data", "eval_data", "bank_data", "checkpoint",
              "base_checkpoint", "bank")


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": spec_to_dict(self.data),
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        paths = d.get("paths", {})
        bad = set(paths) - set(_PATH_KEYS)
        if bad:
            raise ConfigurationError(f"unknown path keys: {sorted(bad)}")
        return cls(
            seed=int(d.get("seed", 0)),
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            data=spec_from_dict(d.get("data", {})),
            paths=dict(paths),
        )

    def resolve_path(self, key: str, base: Path) -> Path | None:
        """Paths in the file resolve relative to the config file's directory."""
        if key not in self.paths:
            return None
        p = Path(self.paths[key])
        return p if p.is_absolute() else (base / p)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def load_run_config(path) -> tuple[RunConfig, Path]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must be a JSON object")
    return RunConfig.from_dict(raw), path.parent


def write_resolved_config(cfg: RunConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
