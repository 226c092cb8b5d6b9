"""
A module reconstructing surfaces from occupancy fields.

mise_extract evaluates a coarse grid and then, level by level, halves the
grid step inside cells whose corners straddle the threshold (and their
neighbors). Points of the final grid that were never evaluated take the
trilinear interpolation of the level above; they lie in cells without a
crossing, so marching cubes sees the same crossing edges as on a dense grid.

Classes:
    OccupancyField: Probability closure over an axis-aligned cube.
    MiseConfig: Grid resolutions and iso threshold.

Functions:
    analytic_field, model_field: Field constructors.
    mise_extract, dense_extract: Surface extraction.
    resample_reconstruction: Reconstruct from an observed cloud and resample it.
    volumetric_iou: Voxel-center IoU of two watertight meshes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import ndimage

from .bvh import SpatialIndex
from .errors import (
    AllInside,
    AllOutside,
    EmptyCloud,
    InvalidCount,
    InvalidParams,
    NonFinite,
    ReconstructionFailed,
)
from .field import Latent, MimoModel
from .geometry import PointCloud, TriMesh
from .marching import extract_surface
from .render import sample_surface

logger = logging.getLogger(__name__)

DEFAULT_BOX = (-0.55, 0.55)
EVAL_CHUNK = 32768


@dataclass(frozen=True)
class OccupancyField:
    """
    Attributes:
        evaluate (Callable[[np.ndarray], np.ndarray]): (M, 3) points -> (M,)
            occupancy probabilities.
        lo (float): Lower corner of the cube on every axis.
        hi (float): Upper corner of the cube on every axis.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    lo: float = DEFAULT_BOX[0]
    hi: float = DEFAULT_BOX[1]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return np.zeros(0)
        chunks = [
            np.asarray(self.evaluate(points[s : s + EVAL_CHUNK]), dtype=np.float64).reshape(-1)
            for s in range(0, len(points), EVAL_CHUNK)
        ]
        out = np.concatenate(chunks)
        if not np.all(np.isfinite(out)):
            raise NonFinite("occupancy field returned NaN/Inf")
        return np.clip(out, 0.0, 1.0)


def analytic_field(
    fn: Callable[[np.ndarray], np.ndarray], bounds: Tuple[float, float] = DEFAULT_BOX
) -> OccupancyField:
    """Wrap a vectorized closure as an OccupancyField over the cube `bounds`."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if not hi > lo:
        raise InvalidParams("bounds", f"empty box [{lo}, {hi}]")
    return OccupancyField(fn, lo, hi)


def model_field(model: MimoModel, latent: Latent, bounds: Tuple[float, float] = DEFAULT_BOX) -> OccupancyField:
    """Occupancy branch of a model conditioned on an encoded cloud."""
    return analytic_field(lambda x: model.predict(latent, x).occupancy(), bounds)


@dataclass(frozen=True)
class MiseConfig:
    """
    Attributes:
        initial (int): Cells per axis of the coarse grid.
        final (int): Cells per axis of the finest grid; initial × 2^k.
        threshold (float): Iso level τ in (0, 1).
    """

    initial: int = 32
    final: int = 128
    threshold: float = 0.5

    def validate(self) -> "MiseConfig":
        if self.initial < 1:
            raise InvalidParams("initial", "must be >= 1")
        ratio = self.final // self.initial
        if self.final < self.initial or self.final % self.initial or ratio & (ratio - 1):
            raise InvalidParams("final", f"{self.final} is not {self.initial} × 2^k")
        if not 0 < self.threshold < 1:
            raise InvalidParams("threshold", "must lie in (0, 1)")
        return self


def _grid_points(field: OccupancyField, idx: np.ndarray, n: int) -> np.ndarray:
    return field.lo + idx * ((field.hi - field.lo) / n)


def mise_extract(field: OccupancyField, config: MiseConfig = MiseConfig()) -> TriMesh:
    """
    Multi-resolution iso-surface extraction at threshold τ.

    Raises:
        AllInside: if no sample of the final grid is below τ.
        AllOutside: if no sample of the final grid reaches τ.
    """
    config.validate()
    n = config.final
    tau = config.threshold
    size = n + 1
    values = np.zeros((size, size, size))
    known = np.zeros((size, size, size), dtype=bool)

    def evaluate(mask: np.ndarray) -> None:
        idx = np.argwhere(mask & ~known)
        if len(idx):
            values[tuple(idx.T)] = field(_grid_points(field, idx, n))
            known[tuple(idx.T)] = True

    step = n // config.initial
    coarse = np.zeros_like(known)
    coarse[::step, ::step, ::step] = True
    evaluate(coarse)

    while step > 1:
        level = values[::step, ::step, ::step]
        m = n // step
        inside = (level >= tau).astype(np.int8)
        corners = sum(
            inside[a : a + m, b : b + m, c : c + m] for a in (0, 1) for b in (0, 1) for c in (0, 1)
        )
        mixed = (corners > 0) & (corners < 8)
        active = ndimage.binary_dilation(mixed, structure=np.ones((3, 3, 3), dtype=bool))

        half = step // 2
        centers = np.zeros((2 * m + 1,) * 3, dtype=bool)
        centers[1::2, 1::2, 1::2] = active
        need = ndimage.binary_dilation(centers, structure=np.ones((3, 3, 3), dtype=bool))

        fine = ndimage.zoom(level, (2 * m + 1) / (m + 1), order=1)
        sub = values[::half, ::half, ::half]
        unknown = ~known[::half, ::half, ::half]
        sub[unknown] = fine[unknown]

        full = np.zeros_like(known)
        full[::half, ::half, ::half] = need
        evaluate(full)
        logger.debug("mise: step %d, %d active cells, %d evaluated", step, int(active.sum()), int(known.sum()))
        step = half

    logger.debug("mise: %d of %d grid points evaluated", int(known.sum()), known.size)
    return extract_surface(values, tau, (field.lo,) * 3, (field.hi - field.lo) / n)


def dense_extract(field: OccupancyField, resolution: int = 128, threshold: float = 0.5) -> TriMesh:
    """Marching cubes on the field evaluated at every grid point."""
    if resolution < 1:
        raise InvalidCount(f"resolution must be >= 1, got {resolution}")
    size = resolution + 1
    idx = np.indices((size, size, size)).reshape(3, -1).T
    values = field(_grid_points(field, idx, resolution)).reshape(size, size, size)
    return extract_surface(values, threshold, (field.lo,) * 3, (field.hi - field.lo) / resolution)


def resample_reconstruction(
    model: MimoModel,
    observed: PointCloud,
    n: int,
    seed: int,
    config: MiseConfig = MiseConfig(),
    bounds: Tuple[float, float] = DEFAULT_BOX,
) -> Tuple[TriMesh, PointCloud]:
    """
    Reconstruct the observed object from the occupancy branch and sample the
    reconstruction into the cloud used for descriptors.

    Args:
        model (MimoModel): Trained field.
        observed (PointCloud): Observed (possibly partial) cloud.
        n (int): Points of the resample.
        seed (int): Sampling seed.
        config (MiseConfig): Extraction settings.
        bounds (Tuple[float, float]): Extraction cube.

    Returns:
        Tuple[TriMesh, PointCloud]: Reconstructed mesh and its resample.

    Raises:
        InvalidCount: if n < 1.
        EmptyCloud: if the observed cloud is empty.
        ReconstructionFailed: if the field has no crossing.
    """
    if n < 1:
        raise InvalidCount(f"resample size must be >= 1, got {n}")
    if len(observed) == 0:
        raise EmptyCloud("observed cloud is empty")
    field = model_field(model, model.encode(observed), bounds)
    try:
        mesh = mise_extract(field, config)
    except (AllInside, AllOutside) as e:
        raise ReconstructionFailed(f"{e.name}: {e}") from e
    return mesh, sample_surface(mesh, n, seed)


def volumetric_iou(
    mesh_a: TriMesh,
    mesh_b: TriMesh,
    resolution: int = 64,
    bounds: Tuple[float, float] = DEFAULT_BOX,
) -> float:
    """
    IoU of the voxel centers inside each mesh (ray parity).

    Returns:
        float: |A ∩ B| / |A ∪ B|; 1.0 when both are empty on the grid.
    """
    if resolution < 1:
        raise InvalidCount(f"resolution must be >= 1, got {resolution}")
    lo, hi = bounds
    h = (hi - lo) / resolution
    axis = lo + h * (np.arange(resolution) + 0.5)
    centers = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    a = SpatialIndex(mesh_a).contains(centers)
    b = SpatialIndex(mesh_b).contains(centers)
    union = int(np.sum(a | b))
    if union == 0:
        return 1.0
    return int(np.sum(a & b)) / union
