"""
A module picking task-relevant grasps with pose descriptors.

Two routes lead from a demonstrated grasp to candidates on the canonical
object: ranking task-agnostic candidates by how closely their pose
descriptor matches the demonstration's, and transferring the demonstrated
pose directly onto the canonical cloud.

Functions:
    select_task_relevant: Top-k candidates by descriptor distance.
    transfer_demo_to_canonical: Demonstrated pose transferred by every restart.
"""

from __future__ import annotations

import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidCount, NoTransfer
from .field import MimoModel
from .geometry import PointCloud, Pose
from .gripper import GraspCandidate
from .pose import (
    BasisPointSet,
    PoseDescriptor,
    TransferConfig,
    check_descriptor_tags,
    pose_descriptor,
    transfer_pose,
)
from .types import Provenance

logger = logging.getLogger(__name__)

RESIDUAL_CUTOFF_FACTOR = 1.5


class RankedCandidate(NamedTuple):
    candidate: GraspCandidate
    distance: float
    index: int


def select_task_relevant(
    model: MimoModel,
    cloud: PointCloud,
    candidates: Sequence[GraspCandidate],
    bps: BasisPointSet,
    z_demo: PoseDescriptor,
    k: int,
) -> List[RankedCandidate]:
    """
    Rank candidates by L1(pose_descriptor(model, cloud, T, X), Z_demo).

    Ties go to the lower candidate index, so the ranking is a total order.

    Args:
        model (MimoModel): Field.
        cloud (PointCloud): Resample P_r of the object the candidates belong to.
        candidates (Sequence[GraspCandidate]): Task-agnostic candidates.
        bps (BasisPointSet): X used for z_demo.
        z_demo (PoseDescriptor): Descriptor of the demonstrated grasp.
        k (int): Number of candidates returned.

    Returns:
        List[RankedCandidate]: The first min(k, |candidates|) in ranking order.

    Raises:
        InvalidCount: if k < 1.
        IncompatibleBps: if z_demo came from another model or basis.
    """
    if k < 1:
        raise InvalidCount(f"k must be >= 1, got {k}")
    model_id = model.digest()
    check_descriptor_tags(z_demo, model_id, bps.bps_id)
    latent = model.encode(cloud)
    n = len(bps)
    distances = [
        float(np.abs(pose_descriptor(model, latent, c.pose, bps, model_id).z - z_demo.z).sum() / n)
        for c in candidates
    ]
    order = sorted(range(len(candidates)), key=lambda i: (distances[i], i))
    return [RankedCandidate(candidates[i], distances[i], i) for i in order[:k]]


def transfer_demo_to_canonical(
    model: MimoModel,
    demo_cloud: PointCloud,
    canonical_cloud: PointCloud,
    bps: BasisPointSet,
    demo_pose: Pose,
    config: TransferConfig = TransferConfig(),
    residual_cutoff: Optional[float] = None,
) -> List[GraspCandidate]:
    """
    Describe the demonstrated grasp on the demonstration cloud, transfer it
    onto the canonical cloud, and keep every restart whose residual is within
    the cutoff.

    The first restart starts at the demonstrated pose. Without an explicit
    cutoff the limit is 1.5 × the best residual, so the best restart is
    always kept.

    Args:
        model (MimoModel): Field.
        demo_cloud (PointCloud): Resample P^d_r of the demonstration object.
        canonical_cloud (PointCloud): Resample P^c_r of the canonical object.
        bps (BasisPointSet): X.
        demo_pose (Pose): T_g^d in the demonstration object's frame.
        config (TransferConfig): Restart settings.
        residual_cutoff (Optional[float]): Largest residual kept.

    Returns:
        List[GraspCandidate]: demo-transfer candidates, lowest residual first.

    Raises:
        NoTransfer: if every restart exceeds the cutoff.
        OptimizationDiverged: if a restart's objective becomes non-finite.
    """
    z = pose_descriptor(model, demo_cloud, demo_pose, bps)
    result = transfer_pose(model, canonical_cloud, bps, z, config, init=demo_pose)
    cutoff = residual_cutoff if residual_cutoff is not None else RESIDUAL_CUTOFF_FACTOR * result.residual
    kept = sorted(
        ((r.residual, i, r.pose) for i, r in enumerate(result.restarts) if r.residual <= cutoff),
        key=lambda item: (item[0], item[1]),
    )
    if not kept:
        raise NoTransfer(
            f"all {len(result.restarts)} restarts exceed the residual cutoff {cutoff:.6g} "
            f"(best {result.residual:.6g})"
        )
    logger.debug("transfer: %d of %d restarts within %.6g", len(kept), len(result.restarts), cutoff)
    return [GraspCandidate(pose, provenance=Provenance.DEMO_TRANSFER) for _, _, pose in kept]
