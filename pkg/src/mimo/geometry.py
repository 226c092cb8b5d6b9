"""
A module defining the geometric value types of mimo.

Classes:
    Pose: Rigid transform with a unit-quaternion rotation (w, x, y, z).
    TriMesh: Immutable triangle surface.
    PointCloud: Immutable point set with optional unit normals.

Functions:
    quat_normalize, quat_multiply, quat_canonical, quat_to_matrix,
    quat_from_rotvec, quat_to_rotvec: unit-quaternion helpers.
    random_rotation, random_pose, look_at: pose constructors.
    transform_mesh, transform_cloud, jitter: rigid transforms and noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyCloud, InvalidParams

QUAT_TOL = 1e-9
NORMAL_TOL = 1e-6


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """
    Normalize quaternion(s) (w, x, y, z) along the last axis.

    Args:
        q (np.ndarray): Array of shape (..., 4).

    Returns:
        np.ndarray: Unit quaternions of the same shape.

    Raises:
        InvalidParams: if a quaternion has zero norm.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise InvalidParams("rotation", "quaternion must be finite and nonzero")
    return q / n


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """
    Map q and −q onto one representative: w > 0, or the first nonzero
    component positive when w == 0.

    Args:
        q (np.ndarray): Array of shape (..., 4).

    Returns:
        np.ndarray: Canonical quaternions, same shape.
    """
    q = np.array(q, dtype=np.float64, copy=True)
    flat = q.reshape(-1, 4)
    for i in range(flat.shape[0]):
        for c in range(4):
            if flat[i, c] != 0.0:
                if flat[i, c] < 0.0:
                    flat[i] = -flat[i]
                break
    return flat.reshape(q.shape)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Hamilton product a ⊗ b for (w, x, y, z) quaternions, broadcasting.

    Args:
        a (np.ndarray): Left factor(s), shape (..., 4).
        b (np.ndarray): Right factor(s), shape (..., 4).

    Returns:
        np.ndarray: Product(s), shape (..., 4).
    """
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    """Conjugate (inverse for unit quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _to_scipy(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64)[..., [1, 2, 3, 0]]


def _from_scipy(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64)[..., [3, 0, 1, 2]]


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (or stack of matrices) of unit quaternion(s)."""
    return Rotation.from_quat(_to_scipy(q)).as_matrix()


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) of rotation matri(x/ces), canonical sign."""
    return quat_canonical(_from_scipy(Rotation.from_matrix(m).as_quat()))


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector(s) (axis · angle) -> unit quaternion(s)."""
    return quat_normalize(_from_scipy(Rotation.from_rotvec(v).as_quat()))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map; q and −q give the same rotation vector (angle ≤ π)."""
    return Rotation.from_quat(_to_scipy(q)).as_rotvec()


def rotation_angle_deg(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle in degrees between two rotations (sign-agnostic)."""
    d = abs(float(np.dot(quat_normalize(qa), quat_normalize(qb))))
    return float(np.degrees(2.0 * np.arccos(min(1.0, d))))


@dataclass(frozen=True)
class Pose:
    """
    Rigid transform x ↦ R(q)·x + t.

    Attributes:
        rotation (np.ndarray): Unit quaternion (w, x, y, z).
        translation (np.ndarray): Translation vector (3,).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidParams("translation", "must be finite")
        q.setflags(write=False)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        """Build from a 4×4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        return Pose(quat_from_matrix(m[:3, :3]), m[:3, 3])

    @staticmethod
    def from_list(v: Sequence[float]) -> "Pose":
        """Build from [qw, qx, qy, qz, tx, ty, tz]."""
        if len(v) != 7:
            raise InvalidParams("pose", f"expected 7 numbers, got {len(v)}")
        return Pose(np.asarray(v[:4], dtype=np.float64), np.asarray(v[4:]))

    def to_list(self) -> list[float]:
        """Serialize as [qw, qx, qy, qz, tx, ty, tz]."""
        return [float(a) for a in self.rotation] + [float(a) for a in self.translation]

    def matrix(self) -> np.ndarray:
        """4×4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform point(s) of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.translation

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction(s) without translating."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation_matrix().T

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other (apply other first)."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.apply(other.translation)
        return Pose(q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.rotation)
        ri = quat_to_matrix(qi)
        return Pose(qi, -(ri @ self.translation))

    def left_increment(self, delta: np.ndarray) -> "Pose":
        """
        Apply a world-frame increment ΔT = (exp(ω), v) on the left, where
        delta = [ω (3), v (3)].
        """
        delta = np.asarray(delta, dtype=np.float64).reshape(6)
        inc = Pose(quat_from_rotvec(delta[:3]), delta[3:])
        return inc.compose(self)

    def canonical(self) -> "Pose":
        """Same transform with hemisphere-canonical quaternion."""
        return Pose(quat_canonical(self.rotation), self.translation)


@dataclass(frozen=True)
class TriMesh:
    """
    Immutable triangle surface.

    Attributes:
        vertices (np.ndarray): (V, 3) float64.
        faces (np.ndarray): (F, 3) int64 vertex indices.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidParams("faces", "vertex index out of range")
        if not np.all(np.isfinite(v)):
            raise InvalidParams("vertices", "must be finite")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        """Unit normals following the right-hand rule of each face."""
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(length > 0, length, 1.0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles
        return 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )

    def edges(self) -> np.ndarray:
        """Sorted undirected edges, one row per face-edge (with repeats)."""
        e = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        return np.sort(e, axis=1)

    def unique_edges(self) -> np.ndarray:
        return np.unique(self.edges(), axis=0)

    def euler_characteristic(self) -> int:
        """V − E + F over referenced vertices."""
        used = np.unique(self.faces)
        return int(len(used) - len(self.unique_edges()) + len(self.faces))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward orientation."""
        tri = self.triangles
        return float(
            np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum()
            / 6.0
        )

    def bounding_radius(self) -> float:
        """Max distance of a vertex from the bounding-box center."""
        lo, hi = self.bounds()
        return float(np.linalg.norm(self.vertices - 0.5 * (lo + hi), axis=1).max())

    def diameter(self) -> float:
        """Bounding-box diagonal length."""
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class PointCloud:
    """
    Immutable point set.

    Attributes:
        points (np.ndarray): (N, 3) float64.
        normals (Optional[np.ndarray]): (N, 3) unit vectors or None.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise InvalidParams("points", "must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise InvalidParams("normals", "one normal per point required")
            if len(n) and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > NORMAL_TOL:
                raise InvalidParams("normals", "must be unit length")
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)

    def require_nonempty(self) -> "PointCloud":
        if len(self.points) == 0:
            raise EmptyCloud("point cloud is empty")
        return self

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @staticmethod
    def concat(clouds: Iterable["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
        if clouds and all(c.normals is not None for c in clouds):
            return PointCloud(pts, np.concatenate([c.normals for c in clouds]))
        return PointCloud(pts)


def transform_mesh(mesh: TriMesh, pose: Pose) -> TriMesh:
    return TriMesh(pose.apply(mesh.vertices), mesh.faces)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    normals = None if cloud.normals is None else pose.apply_vectors(cloud.normals)
    if normals is not None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pose.apply(cloud.points), normals)


def jitter(cloud: PointCloud, sigma: float, seed: int) -> PointCloud:
    """Isotropic Gaussian noise on the points (normals dropped)."""
    if sigma < 0:
        raise InvalidParams("sigma", "must be >= 0")
    rng = np.random.default_rng(seed)
    return PointCloud(cloud.points + rng.normal(0.0, sigma, cloud.points.shape))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion (w, x, y, z), canonical sign."""
    q = rng.normal(size=4)
    return quat_canonical(quat_normalize(q))


def random_pose(rng: np.random.Generator, translation_box: float = 0.0) -> Pose:
    """Uniform rotation and translation uniform in [−box, box]³."""
    q = random_rotation(rng)
    t = rng.uniform(-translation_box, translation_box, 3) if translation_box else np.zeros(3)
    return Pose(q, t)


def look_at(
    eye: Sequence[float],
    target: Sequence[float] = (0.0, 0.0, 0.0),
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> Pose:
    """
    Camera-to-world pose looking from `eye` at `target`. The camera looks
    along its +z axis, image x to the right and image y downward.

    Raises:
        InvalidParams: if eye == target or the view direction is parallel to up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    if np.linalg.norm(fwd) == 0:
        raise InvalidParams("eye", "must differ from target")
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise InvalidParams("up", "parallel to viewing direction")
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, down, fwd, eye
    return Pose.from_matrix(m)
