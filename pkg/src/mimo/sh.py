"""
A module for real spherical harmonics and quadrature on the unit sphere.

Real harmonics are orthonormal over the sphere and ordered by degree l,
then order m from −l to l, so coefficient (l, m) sits at index l² + l + m.

Classes:
    SphereQuadrature: Directions with weights integrating low-degree functions exactly.
    ShBasis: Table of real harmonics up to degree L on a quadrature.

Functions:
    fibonacci_directions: Near-uniform directions on the sphere.
    make_quadrature: Fibonacci directions with moment-corrected weights.
    real_sph_harm: Real orthonormal Y_{l,m} at given directions.
    sh_index: Flat index of (l, m).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.special import factorial, lpmv

from .errors import InvalidCount, InvalidParams

DEFAULT_DIRECTIONS = 1024
DEFAULT_DEGREE = 5


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def fibonacci_directions(n: int) -> np.ndarray:
    """
    Golden-angle spiral of n unit vectors.

    Args:
        n (int): Number of directions (>= 1).

    Returns:
        np.ndarray: (n, 3) unit vectors.
    """
    if n < 1:
        raise InvalidCount(f"direction count must be >= 1, got {n}")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def real_sph_harm(max_degree: int, directions: np.ndarray) -> np.ndarray:
    """
    Real orthonormal spherical harmonics (no Condon–Shortley phase).

    Args:
        max_degree (int): Highest degree L.
        directions (np.ndarray): (n, 3) unit vectors.

    Returns:
        np.ndarray: (n, (L+1)²) values.
    """
    if max_degree < 0:
        raise InvalidParams("L", "degree must be >= 0")
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    cos_t = np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.zeros((len(d), (max_degree + 1) ** 2))
    for l in range(max_degree + 1):
        for m in range(l + 1):
            norm = np.sqrt(
                (2 * l + 1) / (4 * np.pi) * factorial(l - m, exact=True) / factorial(l + m, exact=True)
            )
            p = (-1.0) ** m * lpmv(m, l, cos_t)
            if m == 0:
                out[:, sh_index(l, 0)] = norm * p
            else:
                out[:, sh_index(l, m)] = np.sqrt(2.0) * norm * p * np.cos(m * phi)
                out[:, sh_index(l, -m)] = np.sqrt(2.0) * norm * p * np.sin(m * phi)
    return out


@dataclass(frozen=True)
class SphereQuadrature:
    """
    Attributes:
        directions (np.ndarray): (n, 3) unit vectors.
        weights (np.ndarray): (n,) weights summing to 4π.
        exact_degree (int): Harmonics up to this degree integrate exactly.
    """

    directions: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """∫ f dΩ for values of shape (n,) or (n, k)."""
        return self.weights @ np.asarray(values, dtype=np.float64)


def make_quadrature(n: int = DEFAULT_DIRECTIONS, exact_degree: int = 2 * DEFAULT_DEGREE) -> SphereQuadrature:
    """
    Fibonacci directions with the least-norm weight correction that makes
    every real harmonic up to `exact_degree` integrate exactly.

    Args:
        n (int): Number of directions; must exceed (exact_degree+1)².
        exact_degree (int): Degree of exactness.

    Returns:
        SphereQuadrature: Weights sum to 4π.
    """
    return _make_quadrature(int(n), int(exact_degree))


@lru_cache(maxsize=8)
def _make_quadrature(n: int, exact_degree: int) -> SphereQuadrature:
    moments = (exact_degree + 1) ** 2
    if n <= moments:
        raise InvalidCount(f"{n} directions cannot integrate {moments} harmonics exactly")
    dirs = fibonacci_directions(n)
    a = real_sph_harm(exact_degree, dirs).T
    target = np.zeros(moments)
    target[0] = np.sqrt(4.0 * np.pi)
    w0 = np.full(n, 4.0 * np.pi / n)
    lam = linalg.solve(a @ a.T, target - a @ w0, assume_a="pos")
    w = w0 + a.T @ lam
    dirs.setflags(write=False)
    w.setflags(write=False)
    return SphereQuadrature(dirs, w, exact_degree)


@dataclass(frozen=True)
class ShBasis:
    """
    Attributes:
        degree (int): Highest degree L.
        table (np.ndarray): (n, (L+1)²) harmonics at the quadrature directions.
        quadrature (SphereQuadrature): The directions the table is evaluated on.
    """

    degree: int
    table: np.ndarray
    quadrature: SphereQuadrature

    @staticmethod
    def build(degree: int = DEFAULT_DEGREE, quadrature: SphereQuadrature | None = None) -> "ShBasis":
        """
        Raises:
            InvalidParams: if the quadrature is not exact up to 2·degree.
        """
        quadrature = quadrature or make_quadrature(DEFAULT_DIRECTIONS, 2 * degree)
        if quadrature.exact_degree < 2 * degree:
            raise InvalidParams(
                "L", f"quadrature exact to degree {quadrature.exact_degree} < 2·{degree}"
            )
        table = real_sph_harm(degree, quadrature.directions)
        table.setflags(write=False)
        return ShBasis(degree, table, quadrature)

    @property
    def size(self) -> int:
        return (self.degree + 1) ** 2

    def project(self, values: np.ndarray) -> np.ndarray:
        """
        Coefficients c_{l,m} = Σ_k w_k f(ω_k) Y_{l,m}(ω_k).

        Args:
            values (np.ndarray): (n,) or (k, n) function samples.

        Returns:
            np.ndarray: ((L+1)²,) or (k, (L+1)²).
        """
        return (np.asarray(values, dtype=np.float64) * self.quadrature.weights) @ self.table

    def rotation(self, matrix: np.ndarray) -> np.ndarray:
        """
        Coefficient transform of a rotation: if g(ω) = f(Rᵀω) then
        coeffs(g) = D @ coeffs(f). Block diagonal over degrees.

        Args:
            matrix (np.ndarray): (3, 3) rotation R.

        Returns:
            np.ndarray: ((L+1)², (L+1)²) matrix D.
        """
        rotated = real_sph_harm(self.degree, self.quadrature.directions @ np.asarray(matrix).T)
        return rotated.T @ (self.table * self.quadrature.weights[:, None])

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix of the table; identity for a valid basis."""
        return (self.table * self.quadrature.weights[:, None]).T @ self.table

    def power_spectrum(self, coeffs: np.ndarray) -> np.ndarray:
        """Per-degree power Σ_m c_{l,m}², shape (..., L+1)."""
        c = np.asarray(coeffs, dtype=np.float64)
        return np.stack(
            [np.sum(c[..., l * l : (l + 1) ** 2] ** 2, axis=-1) for l in range(self.degree + 1)],
            axis=-1,
        )
