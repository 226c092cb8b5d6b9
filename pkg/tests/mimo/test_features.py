"""
A module to unit test the feature oracles and datasets in mimo.features.
"""

import json

import numpy as np
import pytest

from mimo.bvh import SpatialIndex
from mimo.errors import CorruptFile, InvalidParams, OnSurface, ShapeError
from mimo.features import (
    DatasetConfig,
    build_dataset,
    cdd_oracle,
    escf_oracle,
    observe,
    occupancy_oracle,
    query_split,
    read_dataset,
    scf_coverage,
    scf_power_spectrum,
    write_dataset,
)
from mimo.geometry import Pose, look_at, random_pose, transform_mesh
from mimo.render import render_partial, sample_surface
from mimo.shapes import ShapeSpec, box_mesh, default_spec, generate_shape, icosphere, random_spec
from mimo.sh import ShBasis, make_quadrature
from mimo.types import ViewMode

SMALL = DatasetConfig(samples_per_shape=64, observed_points=64, degree=2, directions=128, mesh_resolution=32)


def _basis(degree=2):
    return ShBasis.build(degree, make_quadrature(128, 2 * degree))


def test_occupancy_and_cdd_on_box():
    """Test the occupancy label and the closest-direction dot product."""
    index = SpatialIndex(box_mesh())
    assert occupancy_oracle(index, [0.0, 0.0, 0.0]) == 1
    assert occupancy_oracle(index, [0.0, 0.0, 0.9]) == 0
    assert np.isclose(cdd_oracle(index, [0.0, 0.0, -0.8], [0.0, 0.0, 1.0]), 1.0)
    assert np.isclose(cdd_oracle(index, [0.0, 0.0, 0.3], [0.0, 0.0, 1.0]), 1.0)
    with pytest.raises(OnSurface):
        cdd_oracle(index, [0.0, 0.0, 0.5], [0.0, 0.0, 1.0])


def test_coverage_inside_box_is_full():
    """Test that every direction from the box center is covered within range."""
    index = SpatialIndex(box_mesh())
    basis = _basis()
    assert np.all(scf_coverage(index, [0.0, 0.0, 0.0], basis, 2.0) == 1)
    escf = escf_oracle(index, [0.0, 0.0, 0.0], basis, 2.0)
    assert np.isclose(escf[0], 2.0 * np.sqrt(np.pi))
    assert np.allclose(escf[1:], 0.0, atol=1e-10)


def test_coverage_range_limits_hits():
    """Test that a far query sees nothing within a short range."""
    index = SpatialIndex(box_mesh((0.1, 0.1, 0.1)))
    basis = _basis()
    assert np.all(scf_coverage(index, [0.0, 0.0, 3.0], basis, 1.0) == 0)
    with pytest.raises(InvalidParams, match="coverage range"):
        scf_coverage(index, [0.0, 0.0, 3.0], basis, 0.0)


def test_power_spectrum_is_exact_for_a_rotated_sphere_center():
    """Test that the sphere centre keeps its coverage power under any rotation."""
    sphere = icosphere(2, 0.3)
    basis = DatasetConfig().basis()
    before = scf_power_spectrum(escf_oracle(SpatialIndex(sphere), np.zeros(3), basis, 1.0), basis.degree)
    for seed in range(3):
        pose = Pose(random_pose(np.random.default_rng(seed)).rotation, np.zeros(3))
        moved = SpatialIndex(transform_mesh(sphere, pose))
        after = scf_power_spectrum(escf_oracle(moved, np.zeros(3), basis, 1.0), basis.degree)
        assert np.array_equal(before, after)


def test_power_spectrum_is_nearly_rotation_invariant():
    """Test per-degree coverage power of a mug under rigid rotations of mesh and query."""
    mesh = generate_shape(default_spec("mug"), 32)
    basis = DatasetConfig().basis()
    index = SpatialIndex(mesh)
    rng = np.random.default_rng(0)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    queries = rng.uniform(lo, hi, size=(5, 3))
    radius = mesh.diameter()
    worst = 0.0
    for x in queries:
        before = scf_power_spectrum(escf_oracle(index, x, basis, radius), basis.degree)
        pose = random_pose(rng, 0.1)
        moved = SpatialIndex(transform_mesh(mesh, pose))
        after = scf_power_spectrum(escf_oracle(moved, pose.apply(x[None])[0], basis, radius), basis.degree)
        worst = max(worst, float(np.max(np.abs(after - before))))
    assert worst <= 0.15


def test_power_spectrum_checks_degree():
    """Test that the per-degree power sums squares and checks the width."""
    c = np.arange(9, dtype=float)
    assert np.allclose(scf_power_spectrum(c, 2), [0.0, 1 + 4 + 9, 16 + 25 + 36 + 49 + 64])
    with pytest.raises(InvalidParams, match="degree"):
        scf_power_spectrum(c, 3)


def test_build_dataset_columns_and_determinism():
    """Test that a built dataset has consistent columns and is reproducible."""
    specs = [random_spec("mug", 1), random_spec("bowl", 2)]
    a = build_dataset(specs, SMALL, seed=4)
    b = build_dataset(specs, SMALL, seed=4)
    assert [ds.shape_id for ds in a] == ["mug-00001", "bowl-00002"]
    for ds, other in zip(a, b):
        assert ds.digest() == other.digest()
        assert ds.escf.shape == (64, 9)
        assert set(np.unique(ds.occ)) <= {0, 1}
        assert np.all((ds.sdf < 0) == (ds.occ == 1))
        assert np.all(np.abs(ds.cdd) <= 1.0)
        assert len(ds.observed) == 64


def test_build_dataset_wraps_shape_errors():
    """Test that a failing shape is reported with its id."""
    bad = ShapeSpec("mug", {"radius": 0.5}, seed=3)
    with pytest.raises(ShapeError, match="mug-00003"):
        build_dataset([bad], SMALL, seed=0)


def test_dataset_files_roundtrip(tmp_path):
    """Test that write_dataset/read_dataset preserve samples at float32 precision."""
    datasets = build_dataset([random_spec("bottle", 5)], SMALL, seed=1)
    manifest = write_dataset(tmp_path, datasets, seed=1)
    loaded = read_dataset(manifest)
    assert len(loaded) == 1
    got, ref = loaded[0], datasets[0]
    assert got.shape_id == ref.shape_id and got.spec == ref.spec
    assert np.allclose(got.x, ref.x, atol=1e-6)
    assert np.array_equal(got.occ, ref.occ)
    assert got.config == SMALL


def test_read_dataset_rejects_bad_manifest(tmp_path):
    """Test that a manifest with the wrong version raises CorruptFile."""
    (tmp_path / "manifest.json").write_text('{"version": 99}')
    with pytest.raises(CorruptFile, match="manifest version"):
        read_dataset(tmp_path)


def test_read_dataset_reports_broken_entries(tmp_path):
    """Test that a missing record file or entry field raises CorruptFile naming the entry."""
    datasets = build_dataset([random_spec("bottle", 5)], SMALL, seed=1)
    manifest = write_dataset(tmp_path, datasets, seed=1)
    body = json.loads(manifest.read_text())
    records = tmp_path / body["shapes"][0]["records"]
    records.rename(tmp_path / "moved.mfds")
    with pytest.raises(CorruptFile, match=records.name):
        read_dataset(tmp_path)
    (tmp_path / "moved.mfds").rename(records)
    del body["shapes"][0]["observed"]
    manifest.write_text(json.dumps(body))
    with pytest.raises(CorruptFile, match="shape entry 0"):
        read_dataset(tmp_path)


def test_query_split_partitions_queries():
    """Test that the split is a partition with the requested held-out size."""
    ds = build_dataset([random_spec("mug", 8)], SMALL, seed=2)[0]
    train, held = query_split(ds, 0.25, seed=0)
    assert len(train) == 48 and len(held) == 16
    merged = np.concatenate([train.x, held.x])
    assert len(np.unique(merged, axis=0)) == len(ds)
    with pytest.raises(InvalidParams, match="held_out_fraction"):
        query_split(ds, 0.0, seed=0)


def test_partial_observation_sees_one_side():
    """Test that a single camera only observes surface facing it."""
    mesh = box_mesh((0.4, 0.4, 0.4))
    cloud = render_partial(mesh, look_at([2.0, 0.0, 0.0]), 32, 32)
    assert np.all(cloud.points[:, 0] > 0.19)
    config = DatasetConfig(view=ViewMode.PARTIAL, cameras=((2.0, 0.0, 0.0),), observed_points=16, image_size=32)
    assert len(observe(mesh, config, seed=0)) == 16


def test_surface_sample_lies_on_surface():
    """Test that surface samples are on the mesh with outward normals."""
    mesh = box_mesh()
    cloud = sample_surface(mesh, 200, seed=0)
    assert np.allclose(np.abs(cloud.points).max(axis=1), 0.5)
    assert np.all(np.einsum("ij,ij->i", cloud.points, cloud.normals) > 0)
