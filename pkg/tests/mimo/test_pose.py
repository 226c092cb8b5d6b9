"""
A module to unit test pose descriptors, pose transfer and demonstrations.
"""

import numpy as np
import pytest

from mimo.errors import EmptyCloud, IncompatibleBps, InvalidCount, InvalidParams
from mimo.field import MimoConfig, MimoModel
from mimo.geometry import PointCloud, Pose, quat_from_rotvec
from mimo.pose import (
    Demonstration,
    TransferConfig,
    descriptor_l1,
    keypoints_from_final_frame,
    placement_angle_error,
    pose_descriptor,
    pose_objective_and_grad,
    pose_error,
    read_demonstration,
    rearrange_target,
    sample_bps,
    transfer_pose,
    write_demonstration,
)

TINY = MimoConfig(latent_dim=8, encoder_widths=(8,), trunk_widths=(16,), head_widths=((8,),) * 4, degree=1)


def _cloud(seed=0, offset=0.0):
    pts = np.random.default_rng(seed).uniform(-0.15, 0.15, size=(48, 3))
    return PointCloud(pts + offset)


def test_sample_bps_is_seeded_and_bounded():
    """Test the basis point set sampler."""
    bps = sample_bps(16, 0.1, seed=3)
    assert len(bps) == 16
    assert np.all(np.linalg.norm(bps.points, axis=1) <= 0.1)
    assert sample_bps(16, 0.1, seed=3).bps_id == bps.bps_id != sample_bps(16, 0.1, seed=4).bps_id
    with pytest.raises(InvalidCount):
        sample_bps(3)
    with pytest.raises(InvalidParams, match="radius"):
        sample_bps(8, 0.0)


def test_descriptor_tags_are_checked():
    """Test that descriptors from different bases or models cannot be compared."""
    model = MimoModel(TINY, seed=0)
    cloud = _cloud()
    a = pose_descriptor(model, cloud, Pose.identity(), sample_bps(8, seed=0))
    b = pose_descriptor(model, cloud, Pose.identity(), sample_bps(8, seed=1))
    assert descriptor_l1(a, a) == 0.0
    with pytest.raises(IncompatibleBps):
        descriptor_l1(a, b)
    other = pose_descriptor(MimoModel(TINY, seed=1), cloud, Pose.identity(), sample_bps(8, seed=0))
    with pytest.raises(IncompatibleBps):
        transfer_pose(model, cloud, sample_bps(8, seed=0), other, TransferConfig(restarts=1, iterations=1))


def test_transfer_keeps_a_zero_residual_start():
    """Test that a start on the reference pose is returned as the optimum."""
    model = MimoModel(TINY, seed=2)
    cloud = _cloud(1)
    bps = sample_bps(8, seed=0)
    target = Pose(quat_from_rotvec([0.0, 0.0, 0.4]), np.array([0.02, -0.01, 0.03]))
    z_ref = pose_descriptor(model, cloud, target, bps)
    result = transfer_pose(model, cloud, bps, z_ref, TransferConfig(restarts=3, iterations=5), init=target)
    assert result.residual < 1e-9
    dt, deg = pose_error(result.pose, target)
    assert dt < 1e-6 and deg < 1e-4
    for record in result.restarts:
        assert record.residual <= record.init_residual


def test_transfer_follows_a_translated_cloud():
    """Test that translating the cloud translates the recovered pose."""
    model = MimoModel(TINY, seed=3)
    cloud = _cloud(2)
    bps = sample_bps(8, seed=0)
    shift = np.array([0.25, 0.0, -0.125])
    z_ref = pose_descriptor(model, cloud, Pose.identity(), bps)
    moved = PointCloud(cloud.points + shift)
    start = Pose(np.array([1.0, 0.0, 0.0, 0.0]), shift)
    result = transfer_pose(model, moved, bps, z_ref, TransferConfig(restarts=1, iterations=2), init=start)
    assert result.residual < 1e-6
    assert np.allclose(result.pose.translation, shift, atol=1e-6)


def test_keypoints_are_the_closest_pair():
    """Test the closest-pair keypoints and their tie-breaking."""
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    b = np.array([[1.5, 0.0, 0.0], [-0.5, 0.0, 0.0]])
    ka, kb = keypoints_from_final_frame(PointCloud(a), PointCloud(b))
    assert np.array_equal(ka, a[0]) and np.array_equal(kb, b[1])
    with pytest.raises(EmptyCloud):
        keypoints_from_final_frame(PointCloud(a), PointCloud(np.zeros((0, 3))))


def test_rearrangement_of_the_demonstrated_objects_is_identity():
    """Test that reusing the demonstration clouds yields an identity placement."""
    model = MimoModel(TINY, seed=4)
    demo = Demonstration(source=_cloud(3), target=_cloud(4, offset=np.array([0.0, 0.0, 0.3])))
    bps = sample_bps(8, seed=0)
    result = rearrange_target(
        model,
        model,
        demo,
        demo.source,
        demo.target,
        bps,
        bps,
        TransferConfig(restarts=1, iterations=2),
        reconstruct=False,
    )
    dt, deg = pose_error(result.placement, Pose.identity())
    assert dt < 1e-6 and deg < 1e-4
    with pytest.raises(InvalidParams, match="target"):
        rearrange_target(model, model, Demonstration(source=_cloud()), _cloud(), _cloud(), bps, bps)


def test_pose_and_placement_errors():
    """Test the translation/rotation error and the upright angle."""
    a = Pose(quat_from_rotvec([0.0, 0.0, np.pi / 2]), np.array([0.0, 0.0, 0.0]))
    b = Pose.identity()
    dt, deg = pose_error(a, Pose(b.rotation, np.array([0.3, 0.4, 0.0])))
    assert np.isclose(dt, 0.5) and np.isclose(deg, 90.0)
    assert np.isclose(placement_angle_error(a), 0.0)
    tipped = Pose(quat_from_rotvec([np.pi / 2, 0.0, 0.0]), np.zeros(3))
    assert np.isclose(placement_angle_error(tipped), 90.0)


def test_demonstration_file_roundtrip(tmp_path):
    """Test that a demonstration with both clouds and a grasp survives its files."""
    grasp = Pose(quat_from_rotvec([0.1, 0.2, 0.3]), np.array([0.0, 0.05, 0.1]))
    demo = Demonstration(source=_cloud(5), target=_cloud(6), grasp_pose=grasp, bps=sample_bps(12, 0.2, 7))
    write_demonstration(tmp_path / "demo.json", demo)
    assert (tmp_path / "demo.source.ply").exists() and (tmp_path / "demo.target.ply").exists()
    back = read_demonstration(tmp_path / "demo.json")
    assert np.array_equal(back.source.points, demo.source.points)
    assert np.array_equal(back.target.points, demo.target.points)
    assert np.allclose(back.grasp_pose.to_list(), grasp.to_list())
    assert back.bps.bps_id == demo.bps.bps_id


@pytest.mark.parametrize("seed", range(5))
def test_objective_gradient_matches_central_differences(seed):
    """Test the 6-vector pose gradient against central differences of the residual."""
    rng = np.random.default_rng(seed)
    model = MimoModel(TINY, seed=seed).frozen()
    latent = model.encode(_cloud(seed))
    bps = sample_bps(8, seed=seed)
    pose = Pose(quat_from_rotvec(rng.normal(0.0, 0.5, 3)), rng.uniform(-0.05, 0.05, 3))
    z_ref = rng.normal(size=(len(bps), model.config.descriptor_dim))
    _, grad = pose_objective_and_grad(model, latent, bps, pose, z_ref)
    eps = 1e-6
    numeric = np.zeros(6)
    for i in range(6):
        step = np.zeros(6)
        step[i] = eps
        up, _ = pose_objective_and_grad(model, latent, bps, pose.left_increment(step), z_ref)
        down, _ = pose_objective_and_grad(model, latent, bps, pose.left_increment(-step), z_ref)
        numeric[i] = (up - down) / (2 * eps)
    assert np.linalg.norm(grad - numeric) <= 1e-4 * max(np.linalg.norm(numeric), 1e-8)


def test_objective_matches_an_independent_descriptor_distance():
    """Test that the optimized residual equals the L1 distance of two pose descriptors."""
    model = MimoModel(TINY, seed=2)
    cloud = _cloud(2)
    bps = sample_bps(8, seed=1)
    reference = pose_descriptor(model, cloud, Pose(quat_from_rotvec([0.1, 0.2, 0.0]), np.array([0.02, 0.0, 0.0])), bps)
    pose = Pose(quat_from_rotvec([-0.3, 0.0, 0.4]), np.array([0.0, 0.03, -0.01]))
    residual, _ = pose_objective_and_grad(model.frozen(), model.encode(cloud), bps, pose, reference.z)
    current = pose_descriptor(model, cloud, pose, bps)
    assert np.isclose(residual, descriptor_l1(current, reference), rtol=1e-10, atol=1e-12)
    assert np.isclose(residual, np.abs(current.z - reference.z).sum() / len(bps), rtol=1e-10)
