"""
A module to unit test iso-surface reconstruction in mimo.recon.
"""

import numpy as np
import pytest

from mimo import recon
from mimo.bvh import check_watertight
from mimo.errors import AllOutside, InvalidParams, ReconstructionFailed
from mimo.field import MimoConfig, MimoModel
from mimo.geometry import PointCloud
from mimo.recon import MiseConfig, analytic_field, dense_extract, mise_extract, resample_reconstruction, volumetric_iou
from mimo.shapes import box_mesh


def _sphere_field(radius=0.3):
    def fn(x):
        return 1.0 / (1.0 + np.exp(-20.0 * (radius - np.linalg.norm(x, axis=1))))

    return analytic_field(fn)


def test_mise_agrees_with_dense_extraction():
    """Test that the multi-resolution result matches the dense grid on a smooth field."""
    field = _sphere_field()
    coarse = mise_extract(field, MiseConfig(initial=8, final=32))
    dense = dense_extract(field, 32)
    check_watertight(coarse)
    assert np.isclose(coarse.signed_volume(), dense.signed_volume(), rtol=0.02)
    assert np.isclose(dense.signed_volume(), 4.0 / 3.0 * np.pi * 0.3**3, rtol=0.08)


def test_mise_config_validation():
    """Test the grid and threshold checks."""
    with pytest.raises(InvalidParams, match="final"):
        MiseConfig(initial=8, final=24).validate()
    with pytest.raises(InvalidParams, match="threshold"):
        MiseConfig(threshold=1.0).validate()
    with pytest.raises(InvalidParams, match="bounds"):
        analytic_field(lambda x: np.zeros(len(x)), (0.5, 0.5))


def test_empty_field_raises():
    """Test that a field with no crossing raises AllOutside."""
    field = analytic_field(lambda x: np.zeros(len(x)))
    with pytest.raises(AllOutside):
        mise_extract(field, MiseConfig(initial=4, final=8))


def test_volumetric_iou_of_boxes():
    """Test IoU of a box with itself and with a half-size box."""
    big, small = box_mesh(), box_mesh((0.5, 0.5, 0.5))
    assert volumetric_iou(big, big, resolution=22) == 1.0
    assert np.isclose(volumetric_iou(big, small, resolution=22), 0.125)


def test_resample_reports_failed_reconstruction(monkeypatch):
    """Test that an empty occupancy field surfaces as ReconstructionFailed."""
    model = MimoModel(
        MimoConfig(latent_dim=8, encoder_widths=(8,), trunk_widths=(8,), head_widths=((8,),) * 4, degree=1)
    )
    monkeypatch.setattr(recon, "model_field", lambda *_: analytic_field(lambda x: np.zeros(len(x))))
    cloud = PointCloud(np.random.default_rng(0).uniform(-0.2, 0.2, size=(16, 3)))
    with pytest.raises(ReconstructionFailed, match="AllOutside"):
        resample_reconstruction(model, cloud, 32, seed=0, config=MiseConfig(initial=4, final=8))
