"""
Run configuration of the mimo command line.

A RunConfig holds one block per library config type plus the run-wide
seed, output directory and thread count. It loads from a JSON file whose
top-level keys name the blocks; flags given on the command line override the
file. The full snapshot goes into every report.

Classes:
    PipelineConfig: Counts and switches of the batch grasp pipeline.
    RunConfig: Every block of one run.

Functions:
    load_run_config: File plus flag overrides.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from mimo.errors import InvalidParams
from mimo.evaluator import EvaluatorConfig, RefineConfig
from mimo.features import DatasetConfig
from mimo.field import MimoConfig, TrainConfig
from mimo.gmm import EmConfig
from mimo.gripper import CandidateConfig, GripperModel
from mimo.pose import TransferConfig
from mimo.recon import MiseConfig
from mimo.types import Category


@dataclass(frozen=True)
class PipelineConfig:
    """
    Attributes:
        category (str): Shape family of the grasp pipeline.
        training_shapes (int): Instances whose labeled candidates train the evaluator.
        candidates_per_shape (int): Heuristic candidates per instance.
        top_k (int): Candidates kept by descriptor ranking.
        trials (int): Novel instances of the evaluation batch.
        gmm_samples (int): Mixture samples transferred per trial.
        gmm_components (Optional[int]): Fixed mixture size; None selects by BIC.
        resample_points (int): Size of every reconstruction resample.
        reconstruct (bool): Describe reconstruction resamples instead of raw clouds.
        bps_points (int): Basis points of the hand frame.
        bps_radius (float): Radius of the hand-frame basis ball.
    """

    category: str = Category.MUG.value
    training_shapes: int = 8
    candidates_per_shape: int = 64
    top_k: int = 16
    trials: int = 20
    gmm_samples: int = 8
    gmm_components: Optional[int] = None
    resample_points: int = 1024
    reconstruct: bool = True
    bps_points: int = 32
    bps_radius: float = 0.15

    def validate(self) -> "PipelineConfig":
        _category(self.category, "pipeline.category")
        for name in ("training_shapes", "candidates_per_shape", "top_k", "trials", "gmm_samples", "resample_points"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"pipeline.{name}", "must be >= 1")
        if self.gmm_components is not None and self.gmm_components < 1:
            raise InvalidParams("pipeline.gmm_components", "must be >= 1")
        return self


def _category(value: str, name: str) -> Category:
    try:
        return Category(value)
    except ValueError as e:
        choices = ", ".join(c.value for c in Category)
        raise InvalidParams(name, f"unknown category {value!r} (expected one of {choices})") from e


def _tuples(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _block(cls, data: Dict[str, Any], name: str):
    """Build a config block, preferring the type's own from_dict."""
    if hasattr(cls, "from_dict"):
        out = cls.from_dict(data)
    else:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidParams(name, f"unknown keys {unknown}")
        out = cls(**{k: _tuples(v) for k, v in data.items()})
    return out.validate() if hasattr(out, "validate") else out


BLOCKS = {
    "dataset": DatasetConfig,
    "model": MimoConfig,
    "train": TrainConfig,
    "mise": MiseConfig,
    "transfer": TransferConfig,
    "gripper": GripperModel,
    "candidates": CandidateConfig,
    "em": EmConfig,
    "evaluator": EvaluatorConfig,
    "refine": RefineConfig,
    "pipeline": PipelineConfig,
}


@dataclass(frozen=True)
class RunConfig:
    """
    Attributes:
        seed (int): Run seed; every stream derives from it.
        out_dir (str): Directory receiving artifacts and report.json.
        threads (int): Worker threads of batch commands.
        categories (Tuple[str, ...]): Families of gen-dataset, cycled over shapes.
        shapes (int): Instances generated by gen-dataset.
        held_out_fraction (float): Queries held out for accuracy metrics.
        dataset ... pipeline: Library config blocks.
    """

    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    categories: Tuple[str, ...] = (Category.MUG.value,)
    shapes: int = 20
    held_out_fraction: float = 0.1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: MimoConfig = field(default_factory=MimoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mise: MiseConfig = field(default_factory=MiseConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    gripper: GripperModel = field(default_factory=GripperModel)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    em: EmConfig = field(default_factory=EmConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> "RunConfig":
        if self.seed < 0:
            raise InvalidParams("seed", "must be >= 0")
        if self.threads < 1:
            raise InvalidParams("threads", "must be >= 1")
        if self.shapes < 1:
            raise InvalidParams("shapes", "must be >= 1")
        if not self.categories:
            raise InvalidParams("categories", "need at least one category")
        for c in self.categories:
            _category(c, "categories")
        if not 0.0 < self.held_out_fraction < 1.0:
            raise InvalidParams("held_out_fraction", "must lie in (0, 1)")
        for name in BLOCKS:
            getattr(self, name).validate()
        return self

    def category_list(self) -> Tuple[Category, ...]:
        return tuple(_category(c, "categories") for c in self.categories)

    def to_dict(self) -> dict:
        out: Dict[str, Any] = {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
            "categories": list(self.categories),
            "shapes": self.shapes,
            "held_out_fraction": self.held_out_fraction,
        }
        for name in BLOCKS:
            block = getattr(self, name)
            out[name] = _plain(block.to_dict() if hasattr(block, "to_dict") else dataclasses.asdict(block))
        return out

    @staticmethod
    def from_dict(d: Dict[str, Any]) -> "RunConfig":
        d = dict(d)
        kwargs: Dict[str, Any] = {}
        for name, cls in BLOCKS.items():
            if name in d:
                if not isinstance(d[name], dict):
                    raise InvalidParams(name, "must be a JSON object")
                kwargs[name] = _block(cls, d.pop(name), name)
        if "categories" in d:
            cats = d.pop("categories")
            kwargs["categories"] = tuple([cats] if isinstance(cats, str) else cats)
        for key in ("seed", "out_dir", "threads", "shapes", "held_out_fraction"):
            if key in d:
                kwargs[key] = d.pop(key)
        if d:
            raise InvalidParams("config", f"unknown keys {sorted(d)}")
        try:
            return RunConfig(**kwargs).validate()
        except TypeError as e:
            raise InvalidParams("config", str(e)) from e

    def with_block(self, name: str, **changes: Any) -> "RunConfig":
        """Copy with fields of one block replaced."""
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **changes)})


def load_run_config(path: Optional[str], **overrides: Any) -> RunConfig:
    """
    Read `path` (if given) and apply top-level overrides whose value is not None.

    Raises:
        InvalidParams: on an unreadable file or invalid values.
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise InvalidParams("config", f"cannot read {path}: {e}") from e
        if not isinstance(data, dict):
            raise InvalidParams("config", f"{path} must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
