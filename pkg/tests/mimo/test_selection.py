"""
A module to unit test task-relevant grasp ranking and demonstration transfer.
"""

import numpy as np
import pytest

from mimo.errors import IncompatibleBps, InvalidCount, NoTransfer
from mimo.field import MimoConfig, MimoModel
from mimo.geometry import PointCloud, Pose, quat_from_rotvec
from mimo.gripper import GraspCandidate
from mimo.pose import TransferConfig, pose_descriptor, pose_error, sample_bps
from mimo.selection import select_task_relevant, transfer_demo_to_canonical
from mimo.types import Provenance

TINY = MimoConfig(latent_dim=8, encoder_widths=(8,), trunk_widths=(16,), head_widths=((8,),) * 4, degree=1)
DEMO_POSE = Pose(quat_from_rotvec([0.0, 0.3, 0.0]), np.array([0.05, 0.0, 0.1]))


def _cloud(seed=0):
    return PointCloud(np.random.default_rng(seed).uniform(-0.15, 0.15, size=(48, 3)))


def test_ranking_order_ties_and_k():
    """Test that exact matches come first, ties keep index order and k truncates."""
    model = MimoModel(TINY, seed=0)
    cloud = _cloud()
    bps = sample_bps(8, seed=0)
    z = pose_descriptor(model, cloud, DEMO_POSE, bps)
    far = GraspCandidate(Pose(DEMO_POSE.rotation, DEMO_POSE.translation + 0.2))
    candidates = [far, GraspCandidate(DEMO_POSE), GraspCandidate(DEMO_POSE)]
    ranked = select_task_relevant(model, cloud, candidates, bps, z, k=2)
    assert [r.index for r in ranked] == [1, 2]
    assert ranked[0].distance == ranked[1].distance
    assert ranked[0].distance < 1e-9
    assert len(select_task_relevant(model, cloud, candidates, bps, z, k=10)) == 3
    with pytest.raises(InvalidCount):
        select_task_relevant(model, cloud, candidates, bps, z, k=0)


def test_ranking_rejects_a_foreign_basis():
    """Test that a descriptor from another basis cannot rank candidates."""
    model = MimoModel(TINY, seed=0)
    cloud = _cloud()
    z = pose_descriptor(model, cloud, DEMO_POSE, sample_bps(8, seed=0))
    with pytest.raises(IncompatibleBps):
        select_task_relevant(model, cloud, [GraspCandidate(DEMO_POSE)], sample_bps(8, seed=1), z, k=1)


def test_transfer_onto_the_same_cloud_keeps_the_demonstration():
    """Test that transferring onto the demonstration cloud returns the demonstrated pose first."""
    model = MimoModel(TINY, seed=1)
    cloud = _cloud(1)
    bps = sample_bps(8, seed=0)
    config = TransferConfig(restarts=3, iterations=2)
    kept = transfer_demo_to_canonical(model, cloud, cloud, bps, DEMO_POSE, config)
    assert kept and all(c.provenance is Provenance.DEMO_TRANSFER and c.label is None for c in kept)
    dt, deg = pose_error(kept[0].pose, DEMO_POSE)
    assert dt < 1e-6 and deg < 1e-4
    with pytest.raises(NoTransfer):
        transfer_demo_to_canonical(model, cloud, cloud, bps, DEMO_POSE, config, residual_cutoff=-1.0)
