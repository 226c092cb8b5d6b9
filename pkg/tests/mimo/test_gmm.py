"""
A module to unit test the pose mixture model in mimo.gmm.
"""

import numpy as np
import pytest

from mimo.errors import CorruptFile, DegenerateData, InvalidCount, InvalidParams
from mimo.geometry import Pose, quat_from_rotvec, rotation_angle_deg
from mimo.gmm import (
    EmConfig,
    GraspGmm,
    bic,
    fit_gmm,
    gmm_log_density,
    read_gmm,
    sample_gmm,
    select_gmm_bic,
    write_gmm,
)

SMALL_COV = np.diag([1e-4, 1e-4, 1e-4, 1e-3, 1e-3, 1e-3])


def _generator(means, weights=None):
    k = len(means)
    return GraspGmm(
        np.full(k, 1.0 / k) if weights is None else weights,
        [m.translation for m in means],
        [m.rotation for m in means],
        np.stack([SMALL_COV] * k),
    )


MEAN_A = Pose(quat_from_rotvec([0.2, -0.1, 0.5]), np.array([0.1, 0.0, 0.2]))
MEAN_B = Pose(quat_from_rotvec([-1.0, 0.4, 0.0]), np.array([-0.3, 0.2, 0.0]))


def test_fit_recovers_the_generator_mean():
    """Test that one component fitted to generator samples lands on its mean."""
    poses = sample_gmm(_generator([MEAN_A]), 400, seed=0)
    gmm = fit_gmm(poses, 1)
    assert np.allclose(gmm.translations[0], MEAN_A.translation, atol=0.005)
    assert rotation_angle_deg(gmm.rotations[0], MEAN_A.rotation) < 2.0
    assert np.isclose(gmm.weights.sum(), 1.0)


def test_quaternion_sign_does_not_change_the_fit():
    """Test that negating every quaternion gives the same mixture."""
    poses = sample_gmm(_generator([MEAN_A, MEAN_B]), 120, seed=1)
    flipped = [Pose(-p.rotation, p.translation) for p in poses]
    a, b = fit_gmm(poses, 2, seed=3), fit_gmm(flipped, 2, seed=3)
    assert np.allclose(a.weights, b.weights, atol=1e-12)
    assert np.allclose(a.translations, b.translations, atol=1e-12)
    assert np.allclose(a.rotations, b.rotations, atol=1e-12)


def test_log_likelihood_never_decreases():
    """Test the EM log-likelihood history is monotone."""
    poses = sample_gmm(_generator([MEAN_A, MEAN_B]), 150, seed=2)
    gmm = fit_gmm(poses, 3, EmConfig(max_iterations=30))
    assert len(gmm.log_likelihoods) >= 2
    assert np.all(np.diff(gmm.log_likelihoods) >= 0.0)


def test_bic_prefers_the_true_component_count():
    """Test that BIC selection finds two well separated clusters."""
    poses = sample_gmm(_generator([MEAN_A, MEAN_B]), 200, seed=4)
    best = select_gmm_bic(poses, range(1, 4))
    assert best.k == 2
    assert bic(best, len(poses)) < bic(fit_gmm(poses, 1), len(poses))


def test_zero_covariance_samples_are_the_means():
    """Test that a collapsed mixture only yields its component means."""
    gmm = GraspGmm([0.5, 0.5], [MEAN_A.translation, MEAN_B.translation], [MEAN_A.rotation, MEAN_B.rotation],
                   np.zeros((2, 6, 6)))
    for pose in sample_gmm(gmm, 20, seed=5):
        nearest = min((MEAN_A, MEAN_B), key=lambda m: np.linalg.norm(m.translation - pose.translation))
        assert np.allclose(pose.translation, nearest.translation)
        assert rotation_angle_deg(pose.rotation, nearest.rotation) < 1e-6
    assert sample_gmm(gmm, 0, seed=5) == []
    with pytest.raises(InvalidCount):
        sample_gmm(gmm, -1, seed=5)


def test_degenerate_data_and_bad_mixtures():
    """Test the distinct-pose check and the mixture validation."""
    with pytest.raises(DegenerateData):
        fit_gmm([MEAN_A] * 3, 2)
    with pytest.raises(DegenerateData):
        select_gmm_bic([MEAN_A], range(2, 4))
    with pytest.raises(InvalidParams, match="weights"):
        GraspGmm([0.3, 0.3], np.zeros((2, 3)), [[1, 0, 0, 0]] * 2, np.zeros((2, 6, 6))).validate()


def test_covariances_respect_the_regularization_floor():
    """Test that fitted covariances reach the floor and validate rejects ones below it."""
    config = EmConfig(regularization=1e-3)
    gmm = fit_gmm(sample_gmm(_generator([MEAN_A, MEAN_B]), 80, seed=6), 2, config, seed=0)
    for cov in gmm.covariances:
        assert np.linalg.eigvalsh(cov)[0] >= config.regularization - 1e-12
    small = _generator([MEAN_A])
    assert small.validate() is small
    with pytest.raises(InvalidParams, match="below"):
        small.validate(floor=1e-3)


def test_mixture_files(tmp_path):
    """Test the mixture JSON file and its rejection of broken content."""
    gmm = fit_gmm(sample_gmm(_generator([MEAN_A]), 50, seed=6), 1)
    write_gmm(tmp_path / "g.json", gmm)
    back = read_gmm(tmp_path / "g.json")
    assert np.allclose(back.covariances, gmm.covariances)
    assert np.allclose(back.translations, gmm.translations)
    (tmp_path / "bad.json").write_text('{"weights": [1.0]}')
    with pytest.raises(CorruptFile):
        read_gmm(tmp_path / "bad.json")
    with pytest.raises(CorruptFile, match="absent.json"):
        read_gmm(tmp_path / "absent.json")


def test_log_density_ignores_quaternion_sign():
    """Test that q and −q score the same under the mixture."""
    gmm = _generator([MEAN_A, MEAN_B])
    poses = sample_gmm(gmm, 20, seed=4)
    flipped = [Pose(-p.rotation, p.translation) for p in poses]
    assert np.allclose(gmm_log_density(gmm, poses), gmm_log_density(gmm, flipped))
    far = Pose(MEAN_A.rotation, MEAN_A.translation + 1.0)
    assert gmm_log_density(gmm, MEAN_A)[0] > gmm_log_density(gmm, far)[0]


def test_sampled_component_frequencies_follow_the_weights():
    """Test that component counts of 10⁴ samples lie within 3σ of the weights."""
    weights = np.array([0.2, 0.5, 0.3])
    means = [MEAN_A, MEAN_B, Pose(quat_from_rotvec([0.0, 0.0, 2.0]), np.array([0.3, -0.3, 0.1]))]
    n = 10_000
    poses = sample_gmm(_generator(means, weights), n, seed=5)
    centres = np.stack([m.translation for m in means])
    t = np.stack([p.translation for p in poses])
    nearest = np.argmin(np.linalg.norm(t[:, None, :] - centres[None], axis=2), axis=1)
    counts = np.bincount(nearest, minlength=3)
    sigma = np.sqrt(n * weights * (1 - weights))
    assert np.all(np.abs(counts - n * weights) <= 3 * sigma)
