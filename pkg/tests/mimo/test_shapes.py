"""
A module to unit test procedural shapes, surface extraction and file formats.
"""

import struct

import numpy as np
import pytest

from mimo.bvh import check_watertight
from mimo.errors import AllInside, AllOutside, CorruptFile, InvalidParams
from mimo.geometry import PointCloud
from mimo.marching import extract_surface
from mimo.meshio import read_obj, read_ply, read_shape_spec, write_obj, write_ply, write_shape_spec
from mimo.records import RecordArrays, decode_records, encode_records, record_width
from mimo.shapes import ShapeSpec, box_mesh, default_spec, generate_shape, icosphere, random_spec, scale_spec
from mimo.types import Category


@pytest.mark.parametrize("category", list(Category))
def test_generated_shapes_are_watertight_and_centered(category):
    """Test that every family yields a closed, outward mesh inside the unit cube."""
    mesh = generate_shape(random_spec(category, 7), 40)
    check_watertight(mesh)
    assert mesh.signed_volume() > 0
    lo, hi = mesh.bounds()
    assert np.all(lo > -0.5) and np.all(hi < 0.5)
    assert np.allclose(0.5 * (lo + hi), 0.0, atol=0.03)


@pytest.mark.parametrize("spec", [default_spec("mug"), random_spec("mug", 7)], ids=["default", "seed7"])
def test_mug_handle_makes_a_torus(spec):
    """Test that a mug surface has one handle: V − E + F = 0."""
    mesh = generate_shape(spec)
    check_watertight(mesh)
    assert mesh.euler_characteristic() == 0

def test_generation_is_deterministic():
    """Test that a spec always produces the same mesh."""
    spec = random_spec("bowl", 3)
    a, b = generate_shape(spec, 32), generate_shape(spec, 32)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_random_spec_is_seeded():
    """Test that equal seeds give equal parameters and distinct seeds differ."""
    assert random_spec("mug", 5).params == random_spec("mug", 5).params
    assert random_spec("mug", 5).params != random_spec("mug", 6).params
    assert random_spec("mug", 5).shape_id == "mug-00005"


def test_invalid_parameters_are_named():
    """Test that range and constraint violations name the parameter."""
    with pytest.raises(InvalidParams, match="'radius'"):
        generate_shape(ShapeSpec("mug", {"radius": 0.9}))
    with pytest.raises(InvalidParams, match="'wall'"):
        ShapeSpec("mug", {"radius": 0.12, "wall": 0.07, "handle_radius": 0.0}).validate()
    with pytest.raises(InvalidParams, match="'color'"):
        ShapeSpec("mug", {"color": 1.0})
    with pytest.raises(InvalidParams, match="category"):
        ShapeSpec("cup")


def test_scale_spec_keeps_ratios():
    """Test that scaling changes lengths and leaves ratios alone."""
    spec = default_spec("bottle")
    scaled = scale_spec(spec, 1.1)
    assert np.isclose(scaled.params["radius"], 1.1 * spec.params["radius"])
    assert scaled.params["neck_ratio"] == spec.params["neck_ratio"]
    with pytest.raises(InvalidParams, match="factor"):
        scale_spec(spec, 0.0)


def test_extract_surface_sphere_and_degenerate_grids():
    """Test marching cubes on a sphere field and the all-inside/all-outside errors."""
    axis = np.linspace(-1.0, 1.0, 33)
    g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    values = 0.5 - np.linalg.norm(g, axis=-1)
    mesh = extract_surface(values, 0.0, (-1.0, -1.0, -1.0), 2.0 / 32)
    check_watertight(mesh)
    assert np.isclose(mesh.signed_volume(), 4.0 / 3.0 * np.pi * 0.125, rtol=0.05)
    with pytest.raises(AllInside):
        extract_surface(np.ones((4, 4, 4)), 0.5, (0, 0, 0), 1.0)
    with pytest.raises(AllOutside):
        extract_surface(np.zeros((4, 4, 4)), 0.5, (0, 0, 0), 1.0)


def test_obj_and_ply_files(tmp_path):
    """Test that meshes and clouds round-trip exactly through OBJ and PLY."""
    mesh = icosphere(1, 0.3)
    write_obj(tmp_path / "m.obj", mesh)
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, mesh.vertices) and np.array_equal(back.faces, mesh.faces)

    cloud = PointCloud(mesh.vertices, mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True))
    write_ply(tmp_path / "c.ply", cloud)
    got = read_ply(tmp_path / "c.ply")
    assert np.array_equal(got.points, cloud.points) and np.array_equal(got.normals, cloud.normals)


def test_corrupt_mesh_files(tmp_path):
    """Test that malformed OBJ and PLY files raise CorruptFile."""
    (tmp_path / "quad.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(CorruptFile, match="4 corners"):
        read_obj(tmp_path / "quad.obj")
    (tmp_path / "bad.ply").write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\n"
                                      "property double y\nproperty double z\nend_header\n0 0 0\n")
    with pytest.raises(CorruptFile, match="expected 2 vertices"):
        read_ply(tmp_path / "bad.ply")


def test_missing_and_undecodable_files_are_corrupt(tmp_path):
    """Test that absent files and non-text bytes raise CorruptFile instead of OS errors."""
    for reader in (read_obj, read_ply, read_shape_spec):
        with pytest.raises(CorruptFile, match="missing"):
            reader(tmp_path / "missing")
    (tmp_path / "binary.ply").write_bytes(b"ply\n\xff\xfe")
    with pytest.raises(CorruptFile):
        read_ply(tmp_path / "binary.ply")
    (tmp_path / "short.ply").write_text("ply\nformat\nend_header\n")
    with pytest.raises(CorruptFile, match="short format"):
        read_ply(tmp_path / "short.ply")
    (tmp_path / "count.ply").write_text("ply\nformat ascii 1.0\nelement vertex two\nend_header\n")
    with pytest.raises(CorruptFile, match=":3:"):
        read_ply(tmp_path / "count.ply")


def test_shape_spec_file(tmp_path):
    """Test the shape spec JSON file."""
    spec = random_spec("mug", 9)
    write_shape_spec(tmp_path / "s.json", spec)
    assert read_shape_spec(tmp_path / "s.json") == spec
    (tmp_path / "x.json").write_text("[1, 2]")
    with pytest.raises(CorruptFile):
        read_shape_spec(tmp_path / "x.json")


def test_record_file_validation():
    """Test record encoding and the checks of the decoder."""
    n, degree = 4, 1
    arrays = RecordArrays(
        x=np.zeros((n, 3)), occ=np.array([0, 1, 1, 0]), sdf=np.zeros(n), escf=np.zeros((n, 4)), cdd=np.zeros(n)
    )
    buf = encode_records(arrays)
    got = decode_records(buf, degree)
    assert got.occ.tolist() == [0, 1, 1, 0]
    assert len(buf) == struct.calcsize("<4sIII") + n * record_width(degree) * 4
    with pytest.raises(CorruptFile, match="record width"):
        decode_records(buf, 2)
    with pytest.raises(CorruptFile, match="truncated"):
        decode_records(buf[:-4], degree)
    with pytest.raises(CorruptFile, match="bad magic"):
        decode_records(b"XXXX" + buf[4:], degree)
    with pytest.raises(CorruptFile, match="occ"):
        encode_records(arrays._replace(occ=np.array([0, 2, 1, 0])))


def test_box_fixture():
    """Test the analytic box fixture."""
    box = box_mesh((0.2, 0.4, 0.6))
    check_watertight(box)
    assert np.isclose(box.signed_volume(), 0.048)
