"""
A module wrapping marching cubes into clean, outward-oriented meshes.

Functions:
    extract_surface: Iso-surface of a dense value grid as a welded TriMesh.
    weld: Merge coincident vertices and drop collapsed faces.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from skimage import measure

from .errors import AllInside, AllOutside
from .geometry import TriMesh

WELD_TOL = 1e-9


def extract_surface(
    values: np.ndarray,
    level: float,
    origin: Sequence[float],
    spacing: float,
) -> TriMesh:
    """
    Run marching cubes on a grid where the inside has values above `level`.

    Args:
        values (np.ndarray): (nx, ny, nz) samples at origin + spacing·(i, j, k).
        level (float): Iso value.
        origin (Sequence[float]): World position of sample (0, 0, 0).
        spacing (float): Grid step.

    Returns:
        TriMesh: Welded mesh with outward (positive-volume) orientation.

    Raises:
        AllInside: if every sample is >= level.
        AllOutside: if every sample is < level.
    """
    v = np.array(values, dtype=np.float64, copy=True)
    inside = v >= level
    if inside.all():
        raise AllInside(f"field >= {level} on the whole grid")
    if not inside.any():
        raise AllOutside(f"field < {level} on the whole grid")

    # samples sitting on the level produce coincident vertices
    v[np.abs(v - level) < 1e-12] = level - 1e-9

    verts, faces, _, _ = measure.marching_cubes(v, level=level, method="lewiner")
    verts = np.asarray(verts, dtype=np.float64) * spacing + np.asarray(origin, dtype=np.float64)
    mesh = weld(verts, np.asarray(faces, dtype=np.int64))
    if mesh.signed_volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def weld(vertices: np.ndarray, faces: np.ndarray, tol: float = WELD_TOL) -> TriMesh:
    """
    Merge vertices closer than `tol` (grid snapping), drop faces that
    collapse and vertices no face references.

    Args:
        vertices (np.ndarray): (V, 3) coordinates.
        faces (np.ndarray): (F, 3) indices.
        tol (float): Snapping tolerance.

    Returns:
        TriMesh: The cleaned mesh.
    """
    key = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    f = inverse[faces]
    ok = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 2] != f[:, 0])
    f = f[ok]
    used, remap = np.unique(f, return_inverse=True)
    v = vertices[first[used]]
    return TriMesh(v, remap.reshape(-1, 3))
