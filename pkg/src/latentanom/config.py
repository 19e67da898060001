"""Run configuration: a YAML file with one section per pipeline stage.

Unknown keys are rejected. Generator hyperparameters that depend on the data
dimensionality (latent size, zero-perturbation weight) are resolved once the
data is loaded.
"""

from __future__ import annotations

import copy
import itertools
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from latentanom.errors import ConfigError
from latentanom.injector import PatchConfig
from latentanom.objectives import GenConfig

OUTPUT_ROOT_ENV = "LATENTANOM_OUTPUT_ROOT"


@dataclass
class DataSection:
    path: Optional[str] = None
    format: Optional[str] = None
    window: int = 200
    stride: Optional[int] = None  # training stride; None means non-overlapping
    eval_stride: int = 1


@dataclass
class PatchSection:
    mode: str = "deviation"
    tau: float = 0.2
    portion: float = 0.5
    per_dimension: bool = False


@dataclass
class EvaluateSection:
    test_path: Optional[str] = None
    detectors: list = field(default_factory=lambda: ["classifier", "recon"])
    embed_epochs: int = 100
    classifier_epochs: int = 30
    K: Optional[int] = None


@dataclass
class PlotSection:
    kind: str = "hist"
    scores: Optional[str] = None
    score_column: str = "recon"
    embeddings: Optional[str] = None
    windows: list = field(default_factory=lambda: [0])
    dim: int = 0
    log_scale: bool = True
    bins: int = 40


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    output_root: Optional[str] = None
    model_dir: Optional[str] = None
    injected: Optional[str] = None
    data: DataSection = field(default_factory=DataSection)
    model: dict = field(default_factory=dict)
    patch: PatchSection = field(default_factory=PatchSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    plot: PlotSection = field(default_factory=PlotSection)
    sweep: dict = field(default_factory=dict)

    def gen_config(self, T: int, D: int) -> GenConfig:
        try:
            return GenConfig(T=T, D=D, **self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from exc

    def patch_config(self) -> PatchConfig:
        try:
            return PatchConfig(seed=self.seed, **asdict(self.patch))
        except ValueError as exc:
            raise ConfigError(f"invalid patch section: {exc}") from exc

    def output_dir(self, command: str) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV) or self.output_root or "runs"
        return Path(root) / command

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"data": DataSection, "patch": PatchSection,
             "evaluate": EvaluateSection, "plot": PlotSection}
_MODEL_KEYS = GenConfig.field_names() - {"T", "D"}


def _build_section(cls, values: Any, name: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    return cls(**values)


def config_from_dict(raw: Optional[dict]) -> RunConfig:
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    kwargs = {k: v for k, v in raw.items() if k not in _SECTIONS}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, raw.get(name), name)
    model = kwargs.get("model") or {}
    if not isinstance(model, dict):
        raise ConfigError("section 'model' must be a mapping")
    bad = set(model) - _MODEL_KEYS
    if bad:
        raise ConfigError(f"unknown keys in 'model': {', '.join(sorted(bad))}")
    kwargs["model"] = model
    sweep = kwargs.get("sweep") or {}
    if set(sweep) - {"grid"}:
        raise ConfigError("section 'sweep' accepts only 'grid'")
    kwargs["sweep"] = sweep
    return RunConfig(**kwargs)


def load_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def save_config(cfg: RunConfig, path: str | Path) -> None:
    """Write a snapshot that ``load_config`` reads back to an equal config."""
    Path(path).write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True))


def set_dotted(cfg: RunConfig, key: str, value) -> RunConfig:
    """Return a copy of ``cfg`` with ``section.field`` (or a top-level key) replaced."""
    d = cfg.to_dict()
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    node[parts[-1]] = value
    return config_from_dict(d)


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        return [{}]
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"sweep grid entry {k!r} must be a nonempty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
