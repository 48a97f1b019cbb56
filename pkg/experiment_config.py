#!/usr/bin/env python3
"""
Experiment Configuration
Typed experiment settings, the dotted key-value file grammar and CLI overrides

    # comment
    dataset.kind = two_moons
    run.seeds = 42, 43, 44
    override.neg_reward.nr.alpha = 0.5
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from lab_errors import ConfigError
from training_engine import TrainConfig, TrainMethod

logger = logging.getLogger(__name__)

SECTIONS = ("dataset", "train", "nr", "run", "posthoc", "metrics", "sweep", "ensemble", "output", "override")
CALIBRATORS = ("temperature", "platt", "isotonic")
DEFAULT_METHODS = ("baseline", "neg_reward", "neg_reward_fixed", "brier_diversity", "multi_stage")


def _listify(value: Any) -> Any:
    if value is None or value == "":
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


StrList = Annotated[List[str], BeforeValidator(_listify)]
IntList = Annotated[List[int], BeforeValidator(_listify)]
FloatList = Annotated[List[float], BeforeValidator(_listify)]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetSpec(_Section):
    kind: Literal["two_moons", "csv", "regional_noise"] = "two_moons"
    n: int = Field(1900, ge=2)
    noise: float = Field(0.25, ge=0.0)
    sizes: Tuple[int, int, int] = (1050, 400, 450)
    seed: int = 42
    path: Optional[str] = None
    label_column: Union[int, str] = -1
    keep_probs: Tuple[float, ...] = (1.0, 0.9, 0.75, 0.5)

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.kind == "csv" and not self.path:
            raise ValueError("dataset.kind = csv needs dataset.path")
        return self


class RunSpec(_Section):
    methods: StrList = Field(default_factory=lambda: list(DEFAULT_METHODS))
    seeds: IntList = Field(default_factory=lambda: [42, 43, 44, 45, 46])
    workers: int = Field(default_factory=lambda: int(os.getenv("CALIBLAB_WORKERS", "1")), ge=1)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, methods):
        known = {m.value for m in TrainMethod}
        unknown = [m for m in methods if m not in known]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {sorted(known)}")
        return methods

    @field_validator("seeds")
    @classmethod
    def _nonempty_seeds(cls, seeds):
        if not seeds:
            raise ValueError("run.seeds must not be empty")
        return seeds


class PosthocSpec(_Section):
    methods: StrList = Field(default_factory=lambda: list(CALIBRATORS))
    iters: int = Field(1000, ge=1)
    lr: float = Field(0.1, gt=0.0)

    @field_validator("methods")
    @classmethod
    def _known_calibrators(cls, methods):
        unknown = [m for m in methods if m not in CALIBRATORS]
        if unknown:
            raise ValueError(f"unknown calibrators {unknown}; choose from {list(CALIBRATORS)}")
        return methods


class MetricsSpec(_Section):
    n_bins: int = Field(15, ge=1)
    beta: float = Field(1.0, ge=0.0)
    gamma: float = Field(1.0, ge=0.0)


class SweepSpec(_Section):
    alphas: FloatList = Field(default_factory=lambda: [0.0, 0.1, 0.5, 1.0])


class EnsembleSpec(_Section):
    members: int = Field(5, ge=2)
    lam: float = Field(1.0, ge=0.0, alias="lambda")
    sizes: IntList = Field(default_factory=lambda: [3, 5, 10])
    n_per_region: int = Field(300, ge=2)
    agents: int = Field(4, ge=2)
    rounds: int = Field(1, ge=0)

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


class OutputSpec(_Section):
    dir: str = Field(default_factory=lambda: os.getenv("CALIBLAB_OUT_DIR", "out"))


class ExperimentConfig(_Section):
    dataset: DatasetSpec = DatasetSpec()
    train: TrainConfig = TrainConfig()
    run: RunSpec = Field(default_factory=RunSpec)
    posthoc: PosthocSpec = Field(default_factory=PosthocSpec)
    metrics: MetricsSpec = MetricsSpec()
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    ensemble: EnsembleSpec = Field(default_factory=EnsembleSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    override: Dict[str, Dict[str, Any]] = Field(default_factory=dict)

    @field_validator("override")
    @classmethod
    def _known_override_methods(cls, override):
        known = {m.value for m in TrainMethod}
        unknown = [m for m in override if m not in known]
        if unknown:
            raise ValueError(f"overrides name unknown methods {unknown}")
        return override

    def train_config(self, method: str, seed: int) -> TrainConfig:
        """Base train settings merged with the per-method override block"""
        base = self.train.model_dump(by_alias=True)
        patch = dict(self.override.get(method, {}))
        nr_patch = patch.pop("nr", {})
        base.update(patch)
        base["nr"] = {**base["nr"], **nr_patch}
        base.update(method=method, seed=seed)
        try:
            return TrainConfig.model_validate(base)
        except ValidationError as e:
            raise ConfigError(f"invalid settings for method {method!r}: {e}") from e

    def validate_runs(self) -> None:
        """Resolve the train settings of every listed or overridden method for every seed"""
        for method in dict.fromkeys([*self.run.methods, *self.override]):
            for seed in self.run.seeds:
                self.train_config(method, seed)

    def canonical(self) -> Dict[str, Any]:
        payload = self.model_dump(mode="json", by_alias=True)
        payload["run"].pop("workers", None)
        payload.pop("output", None)
        return payload

    def config_id(self) -> str:
        """Stable short hash of everything that affects results"""
        text = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


# Grammar

def parse_value(text: str) -> Any:
    text = text.strip()
    if text == "":
        return ""
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip() != ""]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _assign(tree: Dict[str, Any], dotted: str, value: Any, where: str):
    parts = [p.strip() for p in dotted.split(".")]
    if len(parts) < 2 or any(not p for p in parts):
        raise ConfigError(f"{where}: key {dotted!r} must look like section.key")
    if parts[0] not in SECTIONS:
        raise ConfigError(f"{where}: unknown section {parts[0]!r}; expected one of {list(SECTIONS)}")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{where}: {dotted!r} nests under a plain value")
        node = child
    node[parts[-1]] = value


def parse_lines(text: str, source: str = "<config>") -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        _assign(tree, key.strip(), parse_value(value), f"{source}:{number}")
    return tree


def parse_overrides(args: Sequence[str]) -> Dict[str, Any]:
    """`--section.key=value` strings from the command line"""
    tree: Dict[str, Any] = {}
    for arg in args:
        body = arg[2:] if arg.startswith("--") else arg
        if "=" not in body:
            raise ConfigError(f"override {arg!r} must look like --section.key=value")
        key, value = body.split("=", 1)
        _assign(tree, key, parse_value(value), "command line")
    return tree


def merge(base: Dict[str, Any], patch: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(tree: Dict[str, Any]) -> ExperimentConfig:
    tree = dict(tree)
    nr = tree.pop("nr", None)
    if nr is not None:
        train = dict(tree.get("train", {}))
        train["nr"] = {**train.get("nr", {}), **nr}
        tree["train"] = train
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment configuration:\n{e}") from e


def read_tree(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_lines(text, str(path))


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """File values (if any), then command-line overrides on top"""
    tree = read_tree(path) if path else {}
    config = build_config(merge(tree, parse_overrides(overrides)))
    logger.debug(f"configuration {config.config_id()} loaded from {path or 'defaults'}")
    return config


def to_lines(config: ExperimentConfig) -> str:
    """Render a config in the key-value grammar; parsing it back yields the same config"""
    lines: List[str] = []

    def walk(prefix: str, value: Any):
        if isinstance(value, dict):
            for key in sorted(value):
                walk(f"{prefix}.{key}" if prefix else key, value[key])
        elif isinstance(value, (list, tuple)):
            lines.append(f"{prefix} = " + ", ".join(str(v) for v in value) + ("," if len(value) == 1 else ""))
        elif value is not None:
            lines.append(f"{prefix} = {value}")

    walk("", config.model_dump(mode="json", by_alias=True))
    return "\n".join(lines) + "\n"
