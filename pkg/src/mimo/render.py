"""
A module producing observed point clouds of meshes.

Functions:
    sample_surface: Area-weighted uniform surface sample with normals.
    render_partial: Single-view depth-buffer ray cast.
    render_views: Fused multi-view ray cast.
    corner_cameras: Four cameras at the corners of a table around the object.
    camera_rays: Pixel-center rays of a pinhole camera.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bvh import SpatialIndex
from .errors import EmptyMesh, InvalidCount, InvalidParams, NoVisibleSurface
from .geometry import PointCloud, Pose, TriMesh, look_at

logger = logging.getLogger(__name__)

DEFAULT_FOV_DEG = 45.0


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """
    Sample points uniformly by area over the triangles.

    Args:
        mesh (TriMesh): Source surface.
        n (int): Number of points (>= 1).
        seed (int): RNG seed.

    Returns:
        PointCloud: n points with the outward normals of their triangles.

    Raises:
        EmptyMesh: if the mesh has no triangle of positive area.
        InvalidCount: if n < 1.
    """
    if n < 1:
        raise InvalidCount(f"sample count must be >= 1, got {n}")
    areas = mesh.face_areas() if len(mesh.faces) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise EmptyMesh("mesh has no triangle of positive area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face]
    u = 1.0 - r1
    v = r1 * (1.0 - r2)
    w = r1 * r2
    pts = u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + w[:, None] * tri[:, 2]
    return PointCloud(pts, mesh.face_normals()[face])


def camera_rays(
    camera: Pose, width: int, height: int, fov_deg: float = DEFAULT_FOV_DEG
) -> Tuple[np.ndarray, np.ndarray]:
    """
    World-frame rays through the pixel centers of a pinhole camera looking
    along its +z axis.

    Returns:
        Tuple[np.ndarray, np.ndarray]: origins and unit directions, row-major
        over (v, u), shape (height·width, 3) each.
    """
    if width < 1 or height < 1:
        raise InvalidCount(f"image size must be positive, got {width}x{height}")
    if not 0 < fov_deg < 180:
        raise InvalidParams("fov_deg", "must lie in (0, 180)")
    f = 0.5 * height / np.tan(np.radians(0.5 * fov_deg))
    us = (np.arange(width) + 0.5 - 0.5 * width) / f
    vs = (np.arange(height) + 0.5 - 0.5 * height) / f
    uu, vv = np.meshgrid(us, vs)
    d = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d = camera.apply_vectors(d)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.translation, d.shape).copy()
    return o, d


def render_partial(
    mesh: TriMesh,
    camera: Pose,
    width: int,
    height: int,
    fov_deg: float = DEFAULT_FOV_DEG,
    index: Optional[SpatialIndex] = None,
) -> PointCloud:
    """
    Depth-buffer render: one point per pixel whose ray hits the mesh.

    Args:
        mesh (TriMesh): Scene mesh.
        camera (Pose): Camera-to-world pose (see geometry.look_at).
        width (int): Image width in pixels.
        height (int): Image height in pixels.
        fov_deg (float): Vertical field of view.
        index (Optional[SpatialIndex]): Prebuilt index over `mesh`.

    Returns:
        PointCloud: Visible surface points with their face normals.

    Raises:
        NoVisibleSurface: if no ray hits the mesh.
    """
    index = index or SpatialIndex(mesh)
    o, d = camera_rays(camera, width, height, fov_deg)
    t, face = index.ray_hits(o, d)
    hit = face >= 0
    if not np.any(hit):
        raise NoVisibleSurface(f"no pixel of the {width}x{height} view hits the mesh")
    pts = o[hit] + t[hit, None] * d[hit]
    normals = mesh.face_normals()[face[hit]]
    logger.debug("rendered %d of %d pixels", int(hit.sum()), len(hit))
    return PointCloud(pts, normals)


def corner_cameras(
    distance: float = 1.5, height: float = 0.8, target: Sequence[float] = (0.0, 0.0, 0.0)
) -> List[Pose]:
    """
    Four cameras on the diagonals of a table around `target`, all looking at it.

    Args:
        distance (float): Horizontal distance from the target.
        height (float): Camera height above the target.
    """
    if not distance > 0:
        raise InvalidParams("distance", "must be > 0")
    tx, ty, tz = (float(a) for a in target)
    s = distance / np.sqrt(2.0)
    return [
        look_at((tx + sx * s, ty + sy * s, tz + height), (tx, ty, tz))
        for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))
    ]


def render_views(
    mesh: TriMesh,
    cameras: Sequence[Pose],
    width: int,
    height: int,
    fov_deg: float = DEFAULT_FOV_DEG,
    index: Optional[SpatialIndex] = None,
) -> PointCloud:
    """
    Fuse the renders of several cameras into one cloud. Views that see
    nothing are skipped.

    Raises:
        NoVisibleSurface: if no camera sees the mesh.
    """
    if not cameras:
        raise InvalidCount("at least one camera is required")
    index = index or SpatialIndex(mesh)
    clouds = []
    for cam in cameras:
        try:
            clouds.append(render_partial(mesh, cam, width, height, fov_deg, index))
        except NoVisibleSurface:
            logger.debug("camera at %s sees nothing", cam.translation)
    if not clouds:
        raise NoVisibleSurface(f"none of {len(cameras)} cameras sees the mesh")
    return PointCloud.concat(clouds)
