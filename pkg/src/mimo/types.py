"""
A module defining enumerations shared across mimo.

Classes:
    Category: Procedural shape family.
    ViewMode: How the observed cloud of a dataset shape is produced.
    LossKind: Per-branch loss function.
    ModelVariant: Which decoder branches a model carries.
    Provenance: Where a grasp candidate came from.
    GraspLabel: Outcome of the geometric grasp proxy.
    ExitCode: CLI exit codes.
"""

from __future__ import annotations

from enum import Enum, IntEnum


class Category(str, Enum):
    """Procedural shape family; opening (if any) along +z."""

    MUG = "mug"
    BOWL = "bowl"
    BOTTLE = "bottle"


class ViewMode(str, Enum):
    """Observation used as encoder input when building a dataset."""

    FULL = "full"  # area-weighted surface sample
    PARTIAL = "partial"  # fused depth renders from a camera set


class LossKind(IntEnum):
    """Branch loss function."""

    BCE = 1  # logits in, sigmoid applied internally
    CLAMPED_L1 = 2  # |clamp(p, ±δ) − clamp(t, ±δ)|
    L1 = 3  # mean |p − t|


class ModelVariant(str, Enum):
    """Decoder branch set."""

    FOUR = "four"  # occupancy, signed distance, ESCF, CDD
    THREE = "three"  # occupancy, signed distance, SCF power spectrum
    OCCUPANCY = "occupancy"  # occupancy only (joint-training baseline)


class Provenance(str, Enum):
    """Origin of a grasp candidate."""

    HEURISTIC = "heuristic"
    DEMO_TRANSFER = "demo-transfer"
    GMM_SAMPLE = "gmm-sample"


class GraspLabel(str, Enum):
    """Geometric proxy outcome."""

    SUCCESS = "success"
    FAILURE = "failure"


class ExitCode(IntEnum):
    """CLI exit codes."""

    OK = 0
    CONFIG = 2
    DATA = 3
    NUMERIC = 4
