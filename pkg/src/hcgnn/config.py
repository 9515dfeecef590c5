"""Experiment configuration: JSON document plus command-line overrides.

Validation is complete and fast; every referenced path must exist before any
compute starts, and errors name the offending field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

TASKS = ("node-class", "link-pred", "community", "inductive")
HIERARCHY_METHODS = ("louvain", "girvan_newman", "random", "flat")
SPARSITY_MODES = ("global", "per-node")


@dataclass
class ExperimentConfig:
    task: str
    dataset: dict = field(default_factory=dict)
    hierarchy: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    sparsity: dict | None = None

    def __post_init__(self):
        self.hierarchy = {
            "method": "louvain",
            "lambda": 1,
            "lambda_strict": False,
            "levels_used": None,
            "target_levels": 3,
            **self.hierarchy,
        }
        self.model = {"num_layers": 2, "dim": 32, "per_level_weights": False, **self.model}
        self.train = {"lr": 1e-3, "epochs": 200, "seeds": [0], **self.train}
        self.split = {
            "per_class": 20,
            "val_size": 500,
            "test_size": 1000,
            "train_frac": 0.8,
            **self.split,
        }
        self.dataset = {"one_based": False, **self.dataset}

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task: expected one of {TASKS}, got {self.task!r}")
        if self.hierarchy["method"] not in HIERARCHY_METHODS:
            raise ConfigError(
                f"hierarchy.method: expected one of {HIERARCHY_METHODS}, "
                f"got {self.hierarchy['method']!r}"
            )
        if int(self.hierarchy["lambda"]) < 1:
            raise ConfigError("hierarchy.lambda: must be >= 1")
        if self.model["num_layers"] not in (1, 2, 3):
            raise ConfigError("model.num_layers: must be 1, 2 or 3")
        if int(self.model["dim"]) < 1:
            raise ConfigError("model.dim: must be positive")
        seeds = self.train["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("train.seeds: must be a nonempty list")
        if int(self.train["epochs"]) < 1:
            raise ConfigError("train.epochs: must be >= 1")
        if self.sparsity is not None:
            mode = self.sparsity.get("mode")
            if mode is not None and mode not in SPARSITY_MODES:
                raise ConfigError(f"sparsity.mode: expected one of {SPARSITY_MODES}")
            for f in self.sparsity.get("fractions", []):
                if not 0.0 <= float(f) < 1.0:
                    raise ConfigError("sparsity.fractions: values must lie in [0, 1)")
        self._validate_dataset()

    def _validate_dataset(self) -> None:
        ds = self.dataset
        if self.task == "inductive":
            if "manifest" not in ds:
                raise ConfigError("dataset.manifest: required for the inductive task")
            self._check_path("dataset.manifest", ds["manifest"])
            return
        if "grid" in ds:
            g = ds["grid"]
            if (
                not isinstance(g, (list, tuple))
                or len(g) != 2
                or any(int(x) < 1 for x in g)
            ):
                raise ConfigError("dataset.grid: expected [rows, cols] with positive sizes")
            return
        if "edges" not in ds:
            raise ConfigError("dataset.edges: an edge file (or dataset.grid) is required")
        self._check_path("dataset.edges", ds["edges"])
        for key in ("features", "labels"):
            if ds.get(key) is not None:
                self._check_path(f"dataset.{key}", ds[key])
        if self.task in ("node-class", "community") and ds.get("labels") is None:
            raise ConfigError(f"dataset.labels: required for the {self.task} task")

    @staticmethod
    def _check_path(field_name: str, value) -> None:
        if not Path(value).exists():
            raise ConfigError(f"{field_name}: path {value!r} does not exist")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "dataset": self.dataset,
            "hierarchy": self.hierarchy,
            "model": self.model,
            "train": self.train,
            "split": self.split,
            "sparsity": self.sparsity,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _apply_override(data: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse a JSON config file and apply `key.path=value` overrides (flags win)."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key.path=value")
        key, _, raw = item.partition("=")
        _apply_override(data, key.strip(), raw.strip())
    if "task" not in data:
        raise ConfigError("task: field is required")
    known = {"task", "dataset", "hierarchy", "model", "train", "split", "sparsity"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = ExperimentConfig(**data)
    cfg.validate()
    return cfg
