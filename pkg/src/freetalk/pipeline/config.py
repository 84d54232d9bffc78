"""Run configuration: JSON files validated against the schemas shipped in ``freetalk.schemas``."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import ConfigError

# supplementary hyperparameters: AdamW, lr 1e-4, weight decay 1e-2, batch 16, clip 1.0
ATS_DEFAULTS = {"epochs": 100}
STM_DEFAULTS = {"epochs": 30}


def load_schema(name: str) -> dict:
    text = resources.files("freetalk.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(obj, schema_name: str) -> None:
    try:
        jsonschema.validate(obj, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{schema_name} config invalid at {where}: {exc.message}") from None


def read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return obj


@dataclass
class TrainConfig:
    module: str
    data: list[str]
    out: str | None = None
    seed: int = 0
    epochs: int = 100
    max_steps: int | None = None
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip: float | None = 1.0
    crop_frames: int | None = None
    train_split: str = "train"
    val_split: str | None = "val"
    loss_weights: dict | None = None
    model: dict = field(default_factory=dict)
    audio: dict = field(default_factory=dict)
    diffusion: dict = field(default_factory=dict)
    init_checkpoint: str | None = None
    device: str = "cpu"
    workers: int = 0
    log_every: int = 1

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = copy.deepcopy(obj)
        validate(obj, "train_config")
        defaults = ATS_DEFAULTS if obj["module"] == "ats" else STM_DEFAULTS
        for k, v in defaults.items():
            obj.setdefault(k, v)
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(read_json(path))

    def to_json(self) -> dict:
        return asdict(self)


def merge_overrides(base: dict, **overrides) -> dict:
    """Shallow merge that skips ``None`` values (unset CLI flags)."""
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def write_resolved(config: dict, out_dir) -> Path:
    """Snapshot the fully resolved configuration next to the run outputs."""
    path = Path(out_dir) / "config.resolved.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, indent=2, sort_keys=True))
    return path
