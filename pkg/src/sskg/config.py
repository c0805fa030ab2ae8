"""Run configuration shared by the trainer, the evaluation harness and the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

RANK_SWEEP = (8, 16, 32)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    warmup_steps: int = 100
    batch_size: int = 4
    rank: int = 16
    alpha: float = 16.0
    weight_decay: float = 0.01
    max_steps: int = 2000
    seed: int = 0
    h_size: int = 64
    d_g: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    hops: int = 2
    max_triples: int = 64
    max_topics: int = 5
    k: int = 8
    strategy: str = "dfs"
    walk_steps: int = 64
    max_new_tokens: int = 8
    allow_any_rank: bool = False

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, (int, float)) and not isinstance(val, bool) and f.name != "seed":
                if f.name == "weight_decay":
                    if val < 0:
                        raise ConfigError("weight_decay must be >= 0")
                elif not val > 0:
                    raise ConfigError(f"{f.name} must be positive, got {val!r}")
        if not self.allow_any_rank and self.rank not in RANK_SWEEP:
            raise ConfigError(f"rank {self.rank} not in {RANK_SWEEP}; set allow_any_rank to override")
        if self.strategy not in ("dfs", "bfs", "random_walk"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    """A JSON document: the TrainConfig fields plus file locations."""

    train: TrainConfig = field(default_factory=TrainConfig)
    kg_path: Optional[str] = None
    kg_format: str = "tsv"  # "tsv" | "conceptnet"
    language: str = "en"
    train_path: Optional[str] = None
    eval_path: Optional[str] = None
    schema: str = "open_qa"  # "multiple_choice" | "open_qa"
    checkpoint_dir: Optional[str] = None

    _PATH_KEYS = ("kg_path", "kg_format", "language", "train_path", "eval_path", "schema", "checkpoint_dir")

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base: Path | None = None) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(doc) - known - set(cls._PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        paths = {k: doc[k] for k in cls._PATH_KEYS if k in doc}
        if base is not None:
            for key in ("kg_path", "train_path", "eval_path", "checkpoint_dir"):
                if paths.get(key) and not Path(paths[key]).is_absolute():
                    paths[key] = str(base / paths[key])
        if paths.get("kg_format", "tsv") not in ("tsv", "conceptnet"):
            raise ConfigError(f"kg_format must be 'tsv' or 'conceptnet'")
        if paths.get("schema", "open_qa") not in ("multiple_choice", "open_qa"):
            raise ConfigError("schema must be 'multiple_choice' or 'open_qa'")
        return cls(TrainConfig(**{k: v for k, v in doc.items() if k in known}), **paths)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc, base=path.parent)

    def to_dict(self) -> dict[str, Any]:
        out = self.train.to_dict()
        out.update({k: getattr(self, k) for k in self._PATH_KEYS})
        return out
