"""
A module modeling a parallel-jaw gripper and producing labeled grasp candidates.

Hand frame: +z is the approach axis (fingers point along +z, the palm sits
behind them), ±y is the closing axis, the origin is the grasp center midway
between the open fingers. A candidate pose maps hand-frame points into the
object frame.

Candidates come from an antipodal sampler: a surface point is paired with the
point where the inward ray along its normal leaves the object, pairs with
near-opposite normals inside the opening are kept, and the approach axis is
chosen around the pair until the hand is penetration-free. Labels come from a
geometric proxy: both fingers touch the surface when closing, each contact
normal lies in the friction cone of the closing direction, and the palm stays
outside the object.

Classes:
    Box: Axis-aligned box in the hand frame.
    GripperModel: Finger and palm geometry, keypoints.
    CandidateConfig: Sampler and labeling settings.
    GraspScene: A mesh with its spatial index and collision sample.
    GraspCandidate: Pose, optional label, provenance, labeling config hash.

Functions:
    gripper_keypoints, gripper_boxes, hand_collides, generate_candidates,
    label_candidate, label_candidates, fuse_candidates, write_candidates,
    read_candidates.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from utils.seeding import rng_for

from .bvh import SpatialIndex
from .errors import CorruptFile, InvalidCount, InvalidParams, NoCandidates
from .geometry import Pose, TriMesh, rotation_angle_deg
from .meshio import read_text
from .render import sample_surface
from .types import GraspLabel, Provenance

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RAY_EPS = 1e-6
KEYPOINT_NAMES = ("palm", "wrist", "left_base", "left_tip", "right_base", "right_tip")


class Box(NamedTuple):
    """Axis-aligned box in the hand frame."""

    center: np.ndarray
    half: np.ndarray

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strictly-inside test for (N, 3) hand-frame points."""
        return np.all(np.abs(points - self.center) < self.half, axis=-1)


@dataclass(frozen=True)
class GripperModel:
    """
    Attributes:
        max_opening (float): Distance between the inner finger faces when open.
        finger_width (float): Finger extent along x.
        finger_thickness (float): Finger extent along y.
        finger_depth (float): Finger length along the approach axis.
        palm_thickness (float): Palm extent along the approach axis.
        wrist_offset (float): Distance of the wrist keypoint behind the palm.
    """

    max_opening: float = 0.12
    finger_width: float = 0.02
    finger_thickness: float = 0.01
    finger_depth: float = 0.05
    palm_thickness: float = 0.02
    wrist_offset: float = 0.05

    def validate(self) -> "GripperModel":
        for name, value in asdict(self).items():
            if not value > 0:
                raise InvalidParams(name, f"must be > 0, got {value}")
        return self

    @property
    def approach_axis(self) -> np.ndarray:
        return np.array([0.0, 0.0, 1.0])

    @property
    def closing_axis(self) -> np.ndarray:
        return np.array([0.0, 1.0, 0.0])

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "GripperModel":
        try:
            return GripperModel(**{k: float(v) for k, v in d.items()}).validate()
        except TypeError as e:
            raise InvalidParams("gripper", str(e)) from e


def gripper_keypoints(gripper: GripperModel) -> np.ndarray:
    """
    Six hand-frame keypoints in KEYPOINT_NAMES order: palm center, wrist,
    and base and tip of each finger. Finger points lie on the finger boxes.
    """
    g = gripper
    y = g.max_opening / 2 + g.finger_thickness / 2
    base, tip = -g.finger_depth / 2, g.finger_depth / 2
    palm_z = base - g.palm_thickness / 2
    return np.array(
        [
            [0.0, 0.0, palm_z],
            [0.0, 0.0, base - g.palm_thickness - g.wrist_offset],
            [0.0, -y, base],
            [0.0, -y, tip],
            [0.0, y, base],
            [0.0, y, tip],
        ]
    )


def gripper_boxes(gripper: GripperModel) -> dict:
    """Palm, left and right finger boxes of the open hand."""
    g = gripper
    y = g.max_opening / 2 + g.finger_thickness / 2
    half_finger = np.array([g.finger_width / 2, g.finger_thickness / 2, g.finger_depth / 2])
    palm_half = np.array([g.finger_width / 2, y + g.finger_thickness / 2, g.palm_thickness / 2])
    return {
        "palm": Box(np.array([0.0, 0.0, -g.finger_depth / 2 - g.palm_thickness / 2]), palm_half),
        "left": Box(np.array([0.0, -y, 0.0]), half_finger),
        "right": Box(np.array([0.0, y, 0.0]), half_finger),
    }


@dataclass(frozen=True)
class CandidateConfig:
    """
    Attributes:
        min_normal_angle_deg (float): Smallest angle between the pair's normals.
        friction_cone_deg (float): Half-angle of the contact friction cone.
        attempts_per_candidate (int): Surface samples drawn per requested candidate.
        approach_angles (int): Approach directions tried around a pair.
        collision_samples (int): Surface points used for box collision checks.
        pad_rays (int): Contact rays per finger pad side (pad_rays² rays).
        clearance (float): Margin kept between the pair and the open fingers.
    """

    min_normal_angle_deg: float = 150.0
    friction_cone_deg: float = 25.0
    attempts_per_candidate: int = 20
    approach_angles: int = 8
    collision_samples: int = 4096
    pad_rays: int = 3
    clearance: float = 0.002

    def validate(self) -> "CandidateConfig":
        if not 90.0 < self.min_normal_angle_deg <= 180.0:
            raise InvalidParams("min_normal_angle_deg", "must lie in (90, 180]")
        if not 0.0 < self.friction_cone_deg < 90.0:
            raise InvalidParams("friction_cone_deg", "must lie in (0, 90)")
        for name in ("attempts_per_candidate", "approach_angles", "collision_samples", "pad_rays"):
            if getattr(self, name) < 1:
                raise InvalidParams(name, "must be >= 1")
        if self.clearance < 0:
            raise InvalidParams("clearance", "must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(gripper: GripperModel, config: CandidateConfig) -> str:
    """Digest of the settings a label depends on."""
    blob = json.dumps({"gripper": gripper.to_dict(), "labeling": config.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class GraspScene:
    """A mesh with its spatial index and a fixed surface sample for box checks."""

    def __init__(self, mesh: TriMesh, collision_samples: int = CandidateConfig.collision_samples):
        self.mesh = mesh
        self.index = SpatialIndex(mesh)
        self.normals = mesh.face_normals()
        self.surface = sample_surface(mesh, collision_samples, seed=0).points


@dataclass(frozen=True)
class GraspCandidate:
    """
    Attributes:
        pose (Pose): Hand frame in the object frame.
        label (Optional[GraspLabel]): Proxy outcome, None when unlabeled.
        provenance (Provenance): Where the candidate came from.
        config_hash (Optional[str]): Labeling settings digest; set with a label.
    """

    pose: Pose
    label: Optional[GraspLabel] = None
    provenance: Provenance = Provenance.HEURISTIC
    config_hash: Optional[str] = None

    def __post_init__(self):
        if self.label is not None and not self.config_hash:
            raise InvalidParams("config_hash", "a labeled candidate needs its labeling config hash")

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_list(),
            "label": None if self.label is None else self.label.value,
            "provenance": self.provenance.value,
            "config_hash": self.config_hash,
        }

    @staticmethod
    def from_dict(d: dict) -> "GraspCandidate":
        label = d.get("label")
        return GraspCandidate(
            Pose.from_list(d["pose"]),
            None if label is None else GraspLabel(label),
            Provenance(d.get("provenance", Provenance.HEURISTIC.value)),
            d.get("config_hash"),
        )


def _scene(mesh: TriMesh | GraspScene, config: CandidateConfig) -> GraspScene:
    return mesh if isinstance(mesh, GraspScene) else GraspScene(mesh, config.collision_samples)


def hand_collides(
    scene: GraspScene, gripper: GripperModel, pose: Pose, parts: Sequence[str] = ("palm", "left", "right")
) -> bool:
    """
    Whether any listed box of the open hand intersects the object: a surface
    sample point inside the box, or the box center inside the object.
    """
    boxes = gripper_boxes(gripper)
    local = (scene.surface - pose.translation) @ pose.rotation_matrix()
    centers = pose.apply(np.stack([boxes[p].center for p in parts]))
    if np.any(scene.index.contains(centers)):
        return True
    return any(bool(np.any(boxes[p].contains(local))) for p in parts)


def _frame(closing: np.ndarray, approach: np.ndarray, center: np.ndarray) -> Pose:
    x = np.cross(closing, approach)
    m = np.eye(4)
    m[:3, :3] = np.stack([x, closing, approach], axis=1)
    m[:3, 3] = center
    return Pose.from_matrix(m)


def _approaches(closing: np.ndarray, toward: np.ndarray, k: int, rng: np.random.Generator) -> List[np.ndarray]:
    """k unit directions perpendicular to `closing`, those pointing most toward `toward` first."""
    seed_axis = np.eye(3)[int(np.argmin(np.abs(closing)))]
    u = np.cross(closing, seed_axis)
    u /= np.linalg.norm(u)
    w = np.cross(closing, u)
    theta = rng.uniform(0.0, 2 * np.pi) + 2 * np.pi * np.arange(k) / k
    dirs = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * w
    order = np.argsort(-(dirs @ toward), kind="stable")
    return [dirs[i] for i in order]


def generate_candidates(
    mesh: TriMesh | GraspScene,
    gripper: GripperModel,
    n: int,
    seed: int,
    config: CandidateConfig = CandidateConfig(),
) -> List[GraspCandidate]:
    """
    Sample up to n penetration-free antipodal grasps.

    Args:
        mesh (TriMesh | GraspScene): Watertight object.
        gripper (GripperModel): Hand geometry.
        n (int): Number of candidates wanted.
        seed (int): Sampler seed.
        config (CandidateConfig): Sampler settings.

    Returns:
        List[GraspCandidate]: Unlabeled heuristic candidates, at most n.

    Raises:
        InvalidCount: if n < 1.
        NonWatertight: if the mesh is not closed.
        NoCandidates: if no valid grasp is found within the attempt budget.
    """
    if n < 1:
        raise InvalidCount(f"candidate count must be >= 1, got {n}")
    gripper.validate()
    config.validate()
    scene = _scene(mesh, config)
    scene.index.check_watertight()
    rng = rng_for(seed, "candidates")
    attempts = n * config.attempts_per_candidate
    samples = sample_surface(scene.mesh, attempts, int(rng.integers(2**31)))
    inner = samples.points - RAY_EPS * samples.normals
    t, face = scene.index.ray_hits(inner, -samples.normals, gripper.max_opening)
    min_cos = np.cos(np.radians(config.min_normal_angle_deg))
    centroid = scene.mesh.vertices.mean(axis=0)

    out: List[GraspCandidate] = []
    for i in range(attempts):
        if len(out) == n:
            break
        if face[i] < 0 or t[i] + 2 * config.clearance > gripper.max_opening:
            continue
        n1, n2 = samples.normals[i], scene.normals[face[i]]
        if float(n1 @ n2) > min_cos:
            continue
        p1 = samples.points[i]
        p2 = inner[i] - t[i] * n1
        closing = (p2 - p1) / np.linalg.norm(p2 - p1)
        center = (p1 + p2) / 2
        toward = centroid - center
        norm = np.linalg.norm(toward)
        toward = toward / norm if norm > 0 else -n1
        for approach in _approaches(closing, toward, config.approach_angles, rng):
            pose = _frame(closing, approach, center)
            if not hand_collides(scene, gripper, pose):
                out.append(GraspCandidate(pose, provenance=Provenance.HEURISTIC))
                break
    if not out:
        raise NoCandidates(f"no penetration-free antipodal grasp in {attempts} attempts")
    logger.debug("%d candidates from %d attempts", len(out), attempts)
    return out


def _finger_contact(scene: GraspScene, gripper: GripperModel, pose: Pose, side: float, pad_rays: int):
    """First contact of one closing finger: (travel, surface normal, finger motion) or None."""
    g = gripper
    u = (np.arange(pad_rays) + 0.5) / pad_rays - 0.5
    xs, zs = np.meshgrid(u * g.finger_width, u * g.finger_depth, indexing="ij")
    origins = np.stack([xs.ravel(), np.full(xs.size, side * g.max_opening / 2), zs.ravel()], axis=1)
    direction = pose.apply_vectors(np.array([0.0, -side, 0.0]))
    t, face = scene.index.ray_hits(pose.apply(origins), np.tile(direction, (len(origins), 1)), g.max_opening)
    if np.all(face < 0):
        return None
    k = int(np.nanargmin(t))
    return float(t[k]), scene.normals[face[k]], direction


def label_candidate(
    mesh: TriMesh | GraspScene,
    gripper: GripperModel,
    pose: Pose,
    config: CandidateConfig = CandidateConfig(),
) -> GraspLabel:
    """
    Geometric success proxy of a grasp.

    Success needs contacts for both closing fingers that do not cross each
    other, each contact normal within the friction cone of the finger's
    motion, and a palm clear of the object.
    """
    scene = _scene(mesh, config)
    if hand_collides(scene, gripper, pose, ("palm",)):
        return GraspLabel.FAILURE
    cos_cone = np.cos(np.radians(config.friction_cone_deg))
    travel = 0.0
    for side in (-1.0, 1.0):
        contact = _finger_contact(scene, gripper, pose, side, config.pad_rays)
        if contact is None:
            return GraspLabel.FAILURE
        t, normal, direction = contact
        if float(-normal @ direction) < cos_cone:
            return GraspLabel.FAILURE
        travel += t
    if travel > gripper.max_opening:
        return GraspLabel.FAILURE
    return GraspLabel.SUCCESS


def label_candidates(
    mesh: TriMesh | GraspScene,
    gripper: GripperModel,
    candidates: Iterable[GraspCandidate],
    config: CandidateConfig = CandidateConfig(),
) -> List[GraspCandidate]:
    """Label every candidate, stamping the labeling config hash."""
    scene = _scene(mesh, config)
    digest = config_hash(gripper, config)
    return [
        replace(c, label=label_candidate(scene, gripper, c.pose, config), config_hash=digest) for c in candidates
    ]


def fuse_candidates(
    a: Sequence[GraspCandidate],
    b: Sequence[GraspCandidate],
    translation_tol: float = 0.005,
    angle_tol_deg: float = 2.0,
) -> List[GraspCandidate]:
    """
    a followed by b, dropping any candidate within (translation_tol,
    angle_tol_deg) of one already kept.
    """
    kept: List[GraspCandidate] = []
    for c in list(a) + list(b):
        duplicate = any(
            np.linalg.norm(c.pose.translation - k.pose.translation) <= translation_tol
            and rotation_angle_deg(c.pose.rotation, k.pose.rotation) <= angle_tol_deg
            for k in kept
        )
        if not duplicate:
            kept.append(c)
    return kept


def write_candidates(path: PathLike, candidates: Iterable[GraspCandidate]) -> None:
    """One JSON object per line: {pose, label, provenance, config_hash}."""
    lines = [json.dumps(c.to_dict(), sort_keys=True) for c in candidates]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_candidates(path: PathLike) -> List[GraspCandidate]:
    """
    Raises:
        CorruptFile: on a malformed line.
    """
    out = []
    for lineno, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(GraspCandidate.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise CorruptFile(f"{path}:{lineno}: {e}") from e
    return out
