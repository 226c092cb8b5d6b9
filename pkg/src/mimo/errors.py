"""
A module defining the exception hierarchy of mimo.

Every error belongs to one of three families, which the CLI maps onto exit
codes:

    ConfigError  (exit 2): a parameter or pairing is invalid.
    DataError    (exit 3): geometry, clouds or files cannot be used.
    NumericError (exit 4): a computation produced NaN/Inf or diverged.

ConfigError and DataError are also ValueError subclasses, NumericError is an
ArithmeticError subclass.
"""

from __future__ import annotations

from typing import Optional

from .types import ExitCode


class MimoError(Exception):
    """Base class of all mimo errors."""

    exit_code: ExitCode = ExitCode.DATA

    @property
    def name(self) -> str:
        """The error class name, printed on stderr by the CLI."""
        return type(self).__name__


class ConfigError(MimoError, ValueError):
    """A parameter, count or pairing is invalid."""

    exit_code = ExitCode.CONFIG


class DataError(MimoError, ValueError):
    """Input geometry, clouds or files cannot be used."""

    exit_code = ExitCode.DATA


class NumericError(MimoError, ArithmeticError):
    """A computation produced a non-finite value or diverged."""

    exit_code = ExitCode.NUMERIC


class InvalidParams(ConfigError):
    """A named parameter lies outside its valid range."""

    def __init__(self, param: str, message: str):
        super().__init__(f"invalid parameter '{param}': {message}")
        self.param = param


class InvalidCount(ConfigError):
    """A count argument is out of range."""


class ConfigMismatch(ConfigError):
    """Model configuration and dataset metadata disagree."""


class IncompatibleBps(ConfigError):
    """Pose descriptors from different (model, basis point set) pairs were mixed."""


class ShapeMismatch(ConfigError):
    """Array shapes do not agree."""


class EmptyMesh(DataError):
    """The mesh has no triangles."""


class EmptyCloud(DataError):
    """The point cloud has no points."""


class NonWatertight(DataError):
    """Some mesh edge is not shared by exactly two faces."""

    def __init__(self, bad_edges: int):
        super().__init__(f"mesh is not watertight: {bad_edges} non-manifold edges")
        self.bad_edges = bad_edges


class NoVisibleSurface(DataError):
    """A depth render hit nothing."""


class TooFewPoints(DataError):
    """The encoder needs more points."""


class OnSurface(DataError):
    """The query lies on the surface; the closest-point direction is undefined."""


class NoCandidates(DataError):
    """The grasp sampler found nothing within its attempt budget."""


class NoTransfer(DataError):
    """Every transfer restart exceeded the residual cutoff."""


class DegenerateData(DataError):
    """Not enough distinct samples for the requested mixture size."""


class SingleClassDataset(DataError):
    """A classifier dataset contains a single label."""


class AllInside(DataError):
    """No iso-surface crossing: the field is above the threshold everywhere."""


class AllOutside(DataError):
    """No iso-surface crossing: the field is below the threshold everywhere."""


class ReconstructionFailed(DataError):
    """Surface extraction from a learned field failed."""


class CorruptFile(DataError):
    """A binary or JSON artifact failed validation."""


class NonFinite(NumericError):
    """NaN or Inf encountered."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class OptimizationDiverged(NumericError):
    """The pose objective became non-finite."""


class ShapeError(DataError):
    """A geometry error tagged with the shape it came from."""

    def __init__(self, shape_id: str, cause: MimoError):
        super().__init__(f"shape {shape_id}: {cause.name}: {cause}")
        self.shape_id = shape_id
        self.cause = cause
        self.exit_code = cause.exit_code
