"""
A module to unit test spherical harmonics and sphere quadrature in mimo.sh.
"""

import numpy as np
import pytest

from mimo.errors import InvalidCount, InvalidParams
from mimo.geometry import quat_from_rotvec, quat_to_matrix
from mimo.sh import ShBasis, fibonacci_directions, make_quadrature, real_sph_harm, sh_index


def test_fibonacci_directions_are_unit():
    """Test that spiral directions are unit vectors and reject a zero count."""
    d = fibonacci_directions(100)
    assert d.shape == (100, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    with pytest.raises(InvalidCount):
        fibonacci_directions(0)


def test_constant_harmonic_value():
    """Test Y_00 = 1 / (2 sqrt(pi)) everywhere."""
    y = real_sph_harm(2, fibonacci_directions(10))
    assert y.shape == (10, 9)
    assert np.allclose(y[:, sh_index(0, 0)], 0.5 / np.sqrt(np.pi))


def test_quadrature_weights_and_gram():
    """Test that weights sum to 4 pi and the basis is orthonormal under them."""
    basis = ShBasis.build(3)
    assert np.isclose(basis.quadrature.weights.sum(), 4 * np.pi)
    assert np.allclose(basis.gram(), np.eye(basis.size), atol=1e-10)


def test_quadrature_needs_enough_directions():
    """Test that too few directions for the requested exactness are rejected."""
    with pytest.raises(InvalidCount):
        make_quadrature(10, 4)
    with pytest.raises(InvalidParams, match="quadrature exact"):
        ShBasis.build(4, make_quadrature(200, 4))


def test_projection_recovers_coefficients():
    """Test that projecting a band-limited function returns its coefficients."""
    basis = ShBasis.build(2)
    c = np.random.default_rng(0).normal(size=basis.size)
    values = basis.table @ c
    assert np.allclose(basis.project(values), c, atol=1e-10)


def test_rotation_matrix_is_orthogonal_and_preserves_power():
    """Test that the coefficient rotation keeps per-degree power."""
    basis = ShBasis.build(3)
    r = quat_to_matrix(quat_from_rotvec([0.3, -0.4, 0.9]))
    d = basis.rotation(r)
    assert np.allclose(d @ d.T, np.eye(basis.size), atol=1e-8)
    c = np.random.default_rng(1).normal(size=basis.size)
    assert np.allclose(basis.power_spectrum(d @ c), basis.power_spectrum(c), atol=1e-8)


def test_lower_hemisphere_indicator():
    """Test the degree-1 zonal coefficient of the lower-hemisphere indicator."""
    basis = ShBasis.build(2, make_quadrature(2000, 4))
    z = basis.quadrature.directions[:, 2]
    c = basis.project((z < 0).astype(float))
    assert np.isclose(c[sh_index(1, 0)], -0.5 * np.sqrt(3.0) * np.sqrt(np.pi), atol=1e-3)
    assert np.isclose(c[0], np.sqrt(np.pi), atol=1e-2)
