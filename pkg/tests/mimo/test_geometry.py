"""
A module to unit test the pose, mesh and cloud types in mimo.geometry.
"""

import numpy as np
import pytest

from mimo.errors import EmptyCloud, InvalidParams
from mimo.geometry import (
    PointCloud,
    Pose,
    TriMesh,
    look_at,
    quat_canonical,
    quat_from_rotvec,
    quat_to_rotvec,
    random_pose,
    random_rotation,
    rotation_angle_deg,
    transform_cloud,
    transform_mesh,
)
from mimo.shapes import box_mesh, icosphere


def test_pose_list_roundtrip_and_identity():
    """Test that a pose survives to_list/from_list and identity is neutral."""
    p = random_pose(np.random.default_rng(1), 0.5)
    q = Pose.from_list(p.to_list())
    assert np.allclose(q.rotation, p.rotation) and np.allclose(q.translation, p.translation)
    x = np.array([[0.1, -0.2, 0.3]])
    assert np.allclose((Pose.identity() @ p).apply(x), p.apply(x))


def test_pose_from_list_rejects_wrong_length():
    """Test that a pose list of the wrong length is rejected."""
    with pytest.raises(InvalidParams, match="expected 7 numbers"):
        Pose.from_list([1.0, 0.0, 0.0])


def test_pose_zero_quaternion_rejected():
    """Test that a zero quaternion cannot form a pose."""
    with pytest.raises(InvalidParams, match="rotation"):
        Pose(np.zeros(4), np.zeros(3))


def test_compose_and_inverse():
    """Test that composition applies the right operand first and inverse undoes a pose."""
    rng = np.random.default_rng(2)
    a, b = random_pose(rng, 1.0), random_pose(rng, 1.0)
    x = rng.normal(size=(5, 3))
    assert np.allclose((a @ b).apply(x), a.apply(b.apply(x)))
    assert np.allclose((a.inverse() @ a).apply(x), x)
    assert np.allclose(Pose.from_matrix(a.matrix()).apply(x), a.apply(x))


def test_left_increment_is_world_frame():
    """Test that a left increment rotates about the world origin and then translates."""
    p = Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    q = p.left_increment([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.5])
    assert np.allclose(q.translation, [0.0, 1.0, 0.5])
    assert rotation_angle_deg(q.rotation, quat_from_rotvec([0.0, 0.0, np.pi / 2])) < 1e-9


def test_quat_canonical_sign():
    """Test that q and -q share one canonical representative."""
    q = np.array([-0.5, 0.5, -0.5, 0.5])
    assert np.allclose(quat_canonical(q), quat_canonical(-q))
    assert quat_canonical(q)[0] > 0
    assert np.allclose(quat_canonical([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0])


def test_rotvec_roundtrip():
    """Test quaternion/rotation-vector conversions invert each other."""
    v = np.array([0.3, -0.2, 0.7])
    assert np.allclose(quat_to_rotvec(quat_from_rotvec(v)), v)


def test_random_rotation_is_unit_and_canonical():
    """Test that random rotations are unit quaternions with w >= 0."""
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = random_rotation(rng)
        assert np.isclose(np.linalg.norm(q), 1.0)
        assert q[0] >= 0


def test_look_at_points_camera_at_target():
    """Test that the camera +z axis points from eye to target."""
    cam = look_at([1.0, 1.0, 1.0])
    fwd = cam.apply_vectors([0.0, 0.0, 1.0])
    assert np.allclose(fwd, -np.ones(3) / np.sqrt(3.0))
    with pytest.raises(InvalidParams, match="eye"):
        look_at([0.0, 0.0, 0.0])


def test_trimesh_volume_and_diameter():
    """Test the divergence-theorem volume and bounding diagonal of a box."""
    box = box_mesh((1.0, 2.0, 3.0))
    assert np.isclose(box.signed_volume(), 6.0)
    assert np.isclose(box.diameter(), np.sqrt(14.0))
    assert box.euler_characteristic() == 2


def test_trimesh_rejects_bad_index():
    """Test that a face index outside the vertex table is rejected."""
    with pytest.raises(InvalidParams, match="faces"):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_transform_mesh_preserves_volume():
    """Test that a rigid transform keeps the signed volume of a sphere."""
    sphere = icosphere(2, 0.3)
    moved = transform_mesh(sphere, random_pose(np.random.default_rng(4), 1.0))
    assert np.isclose(moved.signed_volume(), sphere.signed_volume())


def test_point_cloud_normals_and_emptiness():
    """Test normal validation, rigid transform of normals and the emptiness guard."""
    with pytest.raises(InvalidParams, match="unit length"):
        PointCloud(np.zeros((1, 3)), np.array([[2.0, 0.0, 0.0]]))
    with pytest.raises(EmptyCloud):
        PointCloud(np.zeros((0, 3))).require_nonempty()
    cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    rot = Pose(quat_from_rotvec([0.0, 0.0, np.pi / 2]), np.zeros(3))
    moved = transform_cloud(cloud, rot)
    assert np.allclose(moved.points, [[0.0, 1.0, 0.0]])
    assert np.allclose(moved.normals, [[0.0, 1.0, 0.0]])
