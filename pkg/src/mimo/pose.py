"""
A module transferring poses through descriptor fields.

A basis point set X rides with a carried frame. Under a pose T its points
T·X_j are described by the field conditioned on an object cloud, and the
concatenated descriptors form a pose descriptor Z. Transfer searches the pose
on a novel object whose descriptor matches a reference Z in L1.

Classes:
    BasisPointSet: Reference points of a carried frame.
    PoseDescriptor: Z with the (model, basis) tags it is comparable under.
    TransferConfig: Restart and step settings of the pose search.
    TransferResult: Best pose, its residual and per-restart records.
    Demonstration: Recorded clouds and grasp pose.
    RearrangeResult: Placement of the moved object.

Functions:
    sample_bps, pose_descriptor, descriptor_l1, pose_objective_and_grad,
    transfer_pose, keypoints_from_final_frame, rearrange_target,
    pose_error, placement_angle_error, write_demonstration, read_demonstration.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from utils.seeding import rng_for

from .autodiff import Tensor
from .errors import (
    CorruptFile,
    EmptyCloud,
    IncompatibleBps,
    InvalidCount,
    InvalidParams,
    OptimizationDiverged,
)
from .field import Latent, MimoModel
from .geometry import PointCloud, Pose, random_rotation, rotation_angle_deg
from .layers import OptimizerState, optimizer_step
from .meshio import read_ply, read_text, write_ply
from .recon import MiseConfig, resample_reconstruction

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class BasisPointSet:
    """
    Attributes:
        points (np.ndarray): (N, 3) points in the carried frame.
        radius (float): Sampling ball radius.
        seed (int): Sampling seed.
    """

    points: np.ndarray
    radius: float
    seed: int

    def __len__(self) -> int:
        return len(self.points)

    @property
    def bps_id(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.points).tobytes()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {"n": len(self), "radius": self.radius, "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "BasisPointSet":
        try:
            return sample_bps(int(d["n"]), float(d["radius"]), int(d["seed"]))
        except KeyError as e:
            raise CorruptFile(f"bps entry lacks {e}") from e


def sample_bps(n: int = 32, radius: float = 0.15, seed: int = 0) -> BasisPointSet:
    """
    n points uniform in the ball of `radius` around the origin.

    Raises:
        InvalidCount: if n < 4.
        InvalidParams: if radius <= 0.
    """
    if n < 4:
        raise InvalidCount(f"basis point set needs >= 4 points, got {n}")
    if not radius > 0:
        raise InvalidParams("radius", "must be > 0")
    rng = rng_for(seed, "bps")
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    pts = d * r[:, None]
    pts.setflags(write=False)
    return BasisPointSet(pts, float(radius), int(seed))


@dataclass(frozen=True)
class PoseDescriptor:
    """
    Attributes:
        z (np.ndarray): (N, D) point descriptors of the transformed basis points.
        model_id (str): Digest of the model that produced z.
        bps_id (str): Identity of the basis point set.
    """

    z: np.ndarray
    model_id: str
    bps_id: str

    @property
    def flat(self) -> np.ndarray:
        return self.z.reshape(-1)


def check_descriptor_tags(a: PoseDescriptor, model_id: str, bps_id: str) -> None:
    if a.model_id != model_id or a.bps_id != bps_id:
        raise IncompatibleBps(
            f"descriptor from (model {a.model_id}, bps {a.bps_id}) "
            f"compared under (model {model_id}, bps {bps_id})"
        )


def descriptor_l1(a: PoseDescriptor, b: PoseDescriptor) -> float:
    """Σ |Z_a − Z_b| / N.

    Raises:
        IncompatibleBps: if the descriptors carry different tags.
    """
    check_descriptor_tags(a, b.model_id, b.bps_id)
    return float(np.abs(a.z - b.z).sum() / len(a.z))


def pose_descriptor(
    model: MimoModel,
    cloud: PointCloud | Latent,
    pose: Pose,
    bps: BasisPointSet,
    model_id: Optional[str] = None,
) -> PoseDescriptor:
    """
    Z = [z(T·X_1 | P), ..., z(T·X_N | P)].

    Args:
        model (MimoModel): Field.
        cloud (PointCloud | Latent): Reconstruction resample P_r, or its encoding.
        pose (Pose): T placing the carried frame.
        bps (BasisPointSet): X.
        model_id (Optional[str]): Precomputed model digest.

    Returns:
        PoseDescriptor: Tagged with the model digest and the basis id.
    """
    latent = cloud if isinstance(cloud, Latent) else model.encode(cloud)
    z = model.descriptors(latent, pose.apply(bps.points))
    return PoseDescriptor(z, model_id or model.digest(), bps.bps_id)


def pose_objective_and_grad(
    model: MimoModel, latent: Latent, bps: BasisPointSet, pose: Pose, z_ref: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Residual Σ_j ‖z(T·X_j) − Z_ref,j‖₁ / N and its gradient with respect to
    a world-frame increment [ω, v] applied on the left of T.

    With y_j = T·X_j and g_j = ∂residual/∂y_j, the gradient is
    [Σ y_j × g_j, Σ g_j]. The L1 subgradient uses sign(0) = 0.

    Args:
        model (MimoModel): Field whose parameters take no gradient (see MimoModel.frozen).
        latent (Latent): Encoded cloud.
        bps (BasisPointSet): X.
        pose (Pose): Current T.
        z_ref (np.ndarray): (N, D) reference descriptors.

    Returns:
        Tuple[float, np.ndarray]: Residual and (6,) gradient.
    """
    y = pose.apply(bps.points)
    x_rel = Tensor(y - latent.centroid, requires_grad=True)
    z = model.descriptor_tensor(Tensor(latent.c), x_rel)
    loss = (z - z_ref).abs().sum() * (1.0 / len(y))
    loss.backward()
    g = x_rel.grad if x_rel.grad is not None else np.zeros_like(y)
    return loss.item(), np.concatenate([np.cross(y, g).sum(axis=0), g.sum(axis=0)])


@dataclass(frozen=True)
class TransferConfig:
    """
    Attributes:
        restarts (int): Independent starts; the first is the given init.
        iterations (int): Adam steps per restart.
        step_size (float): Adam learning rate on the 6-vector increment.
        init_translation (Optional[float]): Half-width of the random initial
            translation box; None uses the cloud's bounding box.
        seed (int): Restart sampling seed.
        tolerance (float): Stop a restart once the gradient norm falls below this.
    """

    restarts: int = 8
    iterations: int = 300
    step_size: float = 1e-2
    init_translation: Optional[float] = None
    seed: int = 0
    tolerance: float = 1e-10

    def validate(self) -> "TransferConfig":
        if self.restarts < 1:
            raise InvalidParams("restarts", "must be >= 1")
        if self.iterations < 0:
            raise InvalidParams("iterations", "must be >= 0")
        if not self.step_size > 0:
            raise InvalidParams("step_size", "must be > 0")
        return self


class RestartRecord(NamedTuple):
    init: Pose
    init_residual: float
    pose: Pose
    residual: float


class TransferResult(NamedTuple):
    pose: Pose
    residual: float
    restarts: List[RestartRecord]


def _restart_inits(cloud: PointCloud, config: TransferConfig, init: Optional[Pose]) -> List[Pose]:
    rng = rng_for(config.seed, "restarts")
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    if config.init_translation is not None:
        c = cloud.centroid()
        lo, hi = c - config.init_translation, c + config.init_translation
    inits = [init or Pose.identity()]
    for _ in range(config.restarts - 1):
        inits.append(Pose(random_rotation(rng), rng.uniform(lo, hi)))
    return inits


def transfer_pose(
    model: MimoModel,
    cloud: PointCloud,
    bps: BasisPointSet,
    z_ref: PoseDescriptor,
    config: TransferConfig = TransferConfig(),
    init: Optional[Pose] = None,
) -> TransferResult:
    """
    T* = argmin_T Σ_j ‖z(T·X_j | P) − Z_ref,j‖₁ / N over several restarts.

    Each restart runs Adam on a left-multiplied increment [ω, v] and keeps
    the best pose it visits, so its result never exceeds its initial
    residual. The restart with the lowest residual wins (lowest index on ties).

    Args:
        model (MimoModel): Field.
        cloud (PointCloud): Resample of the novel object.
        bps (BasisPointSet): X used for z_ref.
        z_ref (PoseDescriptor): Reference descriptor.
        config (TransferConfig): Search settings.
        init (Optional[Pose]): First restart's start (identity when None).

    Returns:
        TransferResult: Best pose, its residual and every restart.

    Raises:
        IncompatibleBps: if z_ref came from another model or basis.
        OptimizationDiverged: if the residual becomes NaN/Inf.
    """
    config.validate()
    model_id = model.digest()
    check_descriptor_tags(z_ref, model_id, bps.bps_id)
    frozen = model.frozen()
    latent = model.encode(cloud)
    records = []
    for k, start in enumerate(_restart_inits(cloud, config, init)):
        pose = start
        state = OptimizerState(lr=config.step_size)
        best_pose, best = start, np.inf
        init_residual = None
        for it in range(config.iterations + 1):
            residual, grad = pose_objective_and_grad(frozen, latent, bps, pose, z_ref.z)
            if not np.isfinite(residual) or not np.all(np.isfinite(grad)):
                raise OptimizationDiverged(f"restart {k}: objective not finite at iteration {it}")
            if init_residual is None:
                init_residual = residual
            if residual < best:
                best_pose, best = pose, residual
            if it == config.iterations or np.linalg.norm(grad) < config.tolerance:
                break
            (delta,) = optimizer_step(state, [np.zeros(6)], [grad])
            pose = pose.left_increment(delta)
        records.append(RestartRecord(start, init_residual, best_pose, best))
        logger.debug("restart %d: %.6f -> %.6f", k, init_residual, best)
    winner = min(range(len(records)), key=lambda i: (records[i].residual, i))
    return TransferResult(records[winner].pose, records[winner].residual, records)


def keypoints_from_final_frame(cloud_a: PointCloud, cloud_b: PointCloud) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closest pair (a ∈ A, b ∈ B); ties go to the lowest (index_a, index_b).

    Raises:
        EmptyCloud: if either cloud is empty.
    """
    a = np.asarray(cloud_a.points if isinstance(cloud_a, PointCloud) else cloud_a, dtype=np.float64)
    b = np.asarray(cloud_b.points if isinstance(cloud_b, PointCloud) else cloud_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("keypoints need two non-empty clouds")
    tree = cKDTree(b)
    dist, _ = tree.query(a, k=1)
    reach = dist.min() * (1.0 + 1e-9) + 1e-15
    rows = np.flatnonzero(dist <= reach)
    pairs = np.array(
        [(i, j) for i, js in zip(rows, tree.query_ball_point(a[rows], r=reach)) for j in js],
        dtype=np.int64,
    ).reshape(-1, 2)
    diff = a[pairs[:, 0]] - b[pairs[:, 1]]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    best = pairs[d == d.min()]
    i, j = best[np.lexsort((best[:, 1], best[:, 0]))[0]]
    return a[i].copy(), b[j].copy()


@dataclass(frozen=True)
class Demonstration:
    """
    Attributes:
        source (PointCloud): Cloud of the grasped or carried object (A).
        target (Optional[PointCloud]): Cloud of the receiving object (B),
            at the final configuration.
        grasp_pose (Optional[Pose]): Demonstrated hand pose T_g^d.
        bps (BasisPointSet): Basis used for the reference descriptors.
    """

    source: PointCloud
    target: Optional[PointCloud] = None
    grasp_pose: Optional[Pose] = None
    bps: BasisPointSet = field(default_factory=sample_bps)

    def validate(self) -> "Demonstration":
        self.source.require_nonempty()
        if self.target is not None:
            self.target.require_nonempty()
        return self


class RearrangeResult(NamedTuple):
    """
    Attributes:
        placement (Pose): World transform to apply to novel B.
        relative (Pose): Demonstrated pose of B's keypoint frame in A's.
        frame_a (Pose): Keypoint frame found on novel A.
        frame_b (Pose): Keypoint frame found on novel B.
        residuals (Tuple[float, float]): Transfer residuals on A and B.
    """

    placement: Pose
    relative: Pose
    frame_a: Pose
    frame_b: Pose
    residuals: Tuple[float, float]


def rearrange_target(
    model_a: MimoModel,
    model_b: MimoModel,
    demo: Demonstration,
    novel_a: PointCloud,
    novel_b: PointCloud,
    bps_a: BasisPointSet,
    bps_b: BasisPointSet,
    config: TransferConfig = TransferConfig(),
    resample: int = 1024,
    mise: MiseConfig = MiseConfig(),
    seed: int = 0,
    reconstruct: bool = True,
) -> RearrangeResult:
    """
    Placement of novel B relative to novel A that reproduces a demonstration.

    Keypoints are the closest pair of the demonstrated clouds at the final
    configuration. Basis points around each keypoint give reference
    descriptors on the demonstrated objects; transferring them onto the
    novel objects yields keypoint frames F̄_A, F̄_B, and the placement is
    F̄_A · (F_A⁻¹ F_B) · F̄_B⁻¹.

    Raises:
        InvalidParams: if the demonstration has no target cloud.
        ReconstructionFailed: if a cloud cannot be reconstructed.
        OptimizationDiverged: if a transfer diverges.
    """
    demo.validate()
    if demo.target is None:
        raise InvalidParams("target", "rearrangement needs the receiving object's cloud")
    k_a, k_b = keypoints_from_final_frame(demo.source, demo.target)
    frame_a = Pose(np.array([1.0, 0.0, 0.0, 0.0]), k_a)
    frame_b = Pose(np.array([1.0, 0.0, 0.0, 0.0]), k_b)

    def resampled(model: MimoModel, cloud: PointCloud, key: int) -> PointCloud:
        if not reconstruct:
            return cloud
        return resample_reconstruction(model, cloud, resample, seed + key, mise)[1]

    ref_a = pose_descriptor(model_a, resampled(model_a, demo.source, 0), frame_a, bps_a)
    ref_b = pose_descriptor(model_b, resampled(model_b, demo.target, 1), frame_b, bps_b)
    found_a = transfer_pose(model_a, resampled(model_a, novel_a, 2), bps_a, ref_a, config, frame_a)
    found_b = transfer_pose(model_b, resampled(model_b, novel_b, 3), bps_b, ref_b, config, frame_b)
    relative = frame_a.inverse() @ frame_b
    placement = found_a.pose @ relative @ found_b.pose.inverse()
    return RearrangeResult(placement, relative, found_a.pose, found_b.pose, (found_a.residual, found_b.residual))


def pose_error(a: Pose, b: Pose) -> Tuple[float, float]:
    """(translation distance, rotation angle in degrees)."""
    return float(np.linalg.norm(a.translation - b.translation)), rotation_angle_deg(a.rotation, b.rotation)


def placement_angle_error(pose: Pose, upright_axis: Sequence[float] = (0.0, 0.0, 1.0)) -> float:
    """Angle in degrees between the object's upright axis after `pose` and +z."""
    axis = np.asarray(upright_axis, dtype=np.float64)
    up = pose.apply_vectors(axis / np.linalg.norm(axis))
    return float(np.degrees(np.arccos(np.clip(up[2] / np.linalg.norm(up), -1.0, 1.0))))


# ---------------------------------------------------------------------------
# demonstration files


def write_demonstration(path: PathLike, demo: Demonstration) -> None:
    """
    Write the demonstration JSON and its clouds as PLY files next to it
    (`<stem>.source.ply`, `<stem>.target.ply`).
    """
    path = Path(path)
    source = f"{path.stem}.source.ply"
    write_ply(path.parent / source, demo.source)
    body = {
        "source_cloud": source,
        "target_cloud": None,
        "grasp_pose": None if demo.grasp_pose is None else demo.grasp_pose.to_list(),
        "bps": demo.bps.to_dict(),
    }
    if demo.target is not None:
        body["target_cloud"] = f"{path.stem}.target.ply"
        write_ply(path.parent / body["target_cloud"], demo.target)
    path.write_text(json.dumps(body, indent=2) + "\n")


def read_demonstration(path: PathLike) -> Demonstration:
    """
    Raises:
        CorruptFile: if the JSON is malformed or a cloud cannot be read.
    """
    path = Path(path)
    try:
        body = json.loads(read_text(path))
        source = read_ply(path.parent / body["source_cloud"])
        target = body.get("target_cloud")
        grasp = body.get("grasp_pose")
        bps = BasisPointSet.from_dict(body.get("bps", sample_bps().to_dict()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CorruptFile(f"{path}: {e}") from e
    return Demonstration(
        source=source,
        target=None if target is None else read_ply(path.parent / target),
        grasp_pose=None if grasp is None else Pose.from_list(grasp),
        bps=bps,
    ).validate()
