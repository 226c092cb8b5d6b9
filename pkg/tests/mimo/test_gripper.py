"""
A module to unit test antipodal candidates and the geometric grasp label.
"""

from dataclasses import replace

import numpy as np
import pytest

from mimo.errors import CorruptFile, InvalidParams, NoCandidates
from mimo.geometry import Pose, random_pose, transform_mesh
from mimo.gripper import (
    KEYPOINT_NAMES,
    CandidateConfig,
    GraspCandidate,
    GraspScene,
    GripperModel,
    config_hash,
    fuse_candidates,
    generate_candidates,
    gripper_keypoints,
    label_candidate,
    label_candidates,
    read_candidates,
    write_candidates,
)
from mimo.shapes import box_mesh, icosphere
from mimo.types import GraspLabel, Provenance

GRIPPER = GripperModel()
FAST = CandidateConfig(collision_samples=2048)


def _shifted(pose, offset):
    return Pose(pose.rotation, pose.translation + np.asarray(offset, dtype=float))


def test_thin_box_candidates_close_across_the_slab():
    """Test that candidates on a thin slab close along its normal and label as successes."""
    scene = GraspScene(box_mesh((0.2, 0.04, 0.2)), FAST.collision_samples)
    candidates = generate_candidates(scene, GRIPPER, 5, seed=0, config=FAST)
    assert 1 <= len(candidates) <= 5
    for c in candidates:
        closing = c.pose.rotation_matrix()[:, 1]
        assert abs(closing[1]) >= np.cos(np.radians(10.0))
        assert c.label is None and c.provenance is Provenance.HEURISTIC
        assert label_candidate(scene, GRIPPER, c.pose, FAST) is GraspLabel.SUCCESS
        assert label_candidate(scene, GRIPPER, _shifted(c.pose, [1.0, 0.0, 0.0]), FAST) is GraspLabel.FAILURE


@pytest.mark.parametrize("seed", range(2))
def test_label_is_invariant_to_a_joint_rigid_motion(seed):
    """Test that moving the object and the grasp together keeps every label."""
    mesh = box_mesh((0.2, 0.04, 0.2))
    scene = GraspScene(mesh, FAST.collision_samples)
    found = generate_candidates(scene, GRIPPER, 4, seed=0, config=FAST)
    poses = [c.pose for c in found] + [_shifted(c.pose, [0.03, 0.0, 0.0]) for c in found]
    poses += [_shifted(c.pose, [0.0, 0.0, 0.5]) for c in found]
    motion = random_pose(np.random.default_rng(seed), 0.3)
    moved = GraspScene(transform_mesh(mesh, motion), FAST.collision_samples)
    before = [label_candidate(scene, GRIPPER, p, FAST) for p in poses]
    after = [label_candidate(moved, GRIPPER, motion @ p, FAST) for p in poses]
    assert after == before
    assert GraspLabel.SUCCESS in before and GraspLabel.FAILURE in before

def test_object_wider_than_the_hand_has_no_candidates():
    """Test that a sphere wider than the opening raises NoCandidates."""
    with pytest.raises(NoCandidates):
        generate_candidates(icosphere(2, 0.1), GRIPPER, 3, seed=0, config=FAST)


def test_oblique_contact_fails_the_friction_cone():
    """Test that fingers closing on the side of a sphere are labeled failures."""
    sphere = icosphere(3, 0.05)
    pose = Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([-0.04, 0.0, -0.03]))
    assert label_candidate(sphere, GRIPPER, pose, FAST) is GraspLabel.FAILURE


def test_label_candidates_stamp_the_config_hash():
    """Test that labels carry the digest of the labeling settings."""
    scene = GraspScene(box_mesh((0.2, 0.04, 0.2)), FAST.collision_samples)
    candidates = generate_candidates(scene, GRIPPER, 2, seed=1, config=FAST)
    labeled = label_candidates(scene, GRIPPER, candidates, FAST)
    digest = config_hash(GRIPPER, FAST)
    assert all(c.config_hash == digest and c.label is not None for c in labeled)
    assert config_hash(GRIPPER, replace(FAST, friction_cone_deg=20.0)) != digest
    with pytest.raises(InvalidParams, match="config_hash"):
        GraspCandidate(Pose.identity(), label=GraspLabel.SUCCESS)


def test_gripper_and_config_validation():
    """Test gripper keypoints and the settings checks."""
    points = gripper_keypoints(GRIPPER)
    assert points.shape == (len(KEYPOINT_NAMES), 3)
    assert np.isclose(points[3, 1], -points[5, 1])
    with pytest.raises(InvalidParams, match="max_opening"):
        GripperModel(max_opening=0.0).validate()
    with pytest.raises(InvalidParams, match="friction_cone_deg"):
        CandidateConfig(friction_cone_deg=90.0).validate()
    assert GripperModel.from_dict(GRIPPER.to_dict()) == GRIPPER


def test_fuse_drops_near_duplicates():
    """Test that fusing keeps the first of two nearly equal poses."""
    a = GraspCandidate(Pose.identity())
    near = GraspCandidate(_shifted(a.pose, [0.001, 0.0, 0.0]), provenance=Provenance.DEMO_TRANSFER)
    far = GraspCandidate(_shifted(a.pose, [0.1, 0.0, 0.0]), provenance=Provenance.DEMO_TRANSFER)
    fused = fuse_candidates([a], [near, far])
    assert len(fused) == 2 and fused[0] is a and fused[1] is far


def test_candidate_files(tmp_path):
    """Test the JSON-lines candidate file and its error reporting."""
    digest = config_hash(GRIPPER, FAST)
    candidates = [
        GraspCandidate(Pose.identity(), GraspLabel.SUCCESS, Provenance.GMM_SAMPLE, digest),
        GraspCandidate(_shifted(Pose.identity(), [0.0, 0.1, 0.0])),
    ]
    write_candidates(tmp_path / "c.jsonl", candidates)
    back = read_candidates(tmp_path / "c.jsonl")
    assert [c.to_dict() for c in back] == [c.to_dict() for c in candidates]
    (tmp_path / "bad.jsonl").write_text('{"pose": [0, 0, 0, 1, 0, 0, 0]}\n{"label": "success"}\n')
    with pytest.raises(CorruptFile, match=":2:"):
        read_candidates(tmp_path / "bad.jsonl")
    with pytest.raises(CorruptFile, match="absent.jsonl"):
        read_candidates(tmp_path / "absent.jsonl")
