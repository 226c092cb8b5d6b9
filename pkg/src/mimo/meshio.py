"""
A module reading and writing meshes, point clouds and shape specs.

Formats:
    OBJ : ASCII, `v x y z` and triangular `f i j k` (1-based) lines only.
    PLY : ASCII, `x y z` with optional `nx ny nz` per vertex.
    JSON: one ShapeSpec object {category, params{...}, seed}.

Floats are written with 17 significant digits so files round-trip exactly.
read_bytes and read_text turn missing, unreadable or undecodable files into
CorruptFile for every loader in mimo.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Union

import numpy as np

from .errors import CorruptFile, InvalidParams
from .geometry import PointCloud, TriMesh
from .shapes import ShapeSpec

PathLike = Union[str, Path]


def read_bytes(path: PathLike) -> bytes:
    """
    Raises:
        CorruptFile: if the file is missing or unreadable.
    """
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CorruptFile(f"{path}: {e.strerror or e}") from e


def read_text(path: PathLike, encoding: str = "utf-8") -> str:
    """
    Raises:
        CorruptFile: if the file is missing, unreadable or not valid text.
    """
    try:
        return Path(path).read_text(encoding=encoding)
    except OSError as e:
        raise CorruptFile(f"{path}: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise CorruptFile(f"{path}: {e}") from e


def _fmt(row) -> str:
    return " ".join(f"{float(a):.17g}" for a in row)


def write_obj(path: PathLike, mesh: TriMesh) -> None:
    lines = ["# mimo mesh"]
    lines += [f"v {_fmt(v)}" for v in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_obj(path: PathLike) -> TriMesh:
    """
    Read a triangles-only OBJ. Texture/normal indices (`f 1/1/1 ...`) are
    ignored; polygons with more than three corners are rejected.

    Raises:
        CorruptFile: on malformed lines or bad indices.
    """
    verts: List[List[float]] = []
    faces: List[List[int]] = []
    for lineno, raw in enumerate(read_text(path, "ascii").splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(a) for a in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise ValueError(f"face with {len(idx)} corners")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except ValueError as e:
            raise CorruptFile(f"{path}:{lineno}: {e}") from e
    try:
        return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces).reshape(-1, 3))
    except InvalidParams as e:
        raise CorruptFile(f"{path}: {e}") from e


def write_ply(path: PathLike, cloud: PointCloud) -> None:
    has_n = cloud.normals is not None
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_n:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")
    rows = np.hstack([cloud.points, cloud.normals]) if has_n else cloud.points
    body = [_fmt(r) for r in rows]
    Path(path).write_text("\n".join(header + body) + "\n", encoding="ascii")


def read_ply(path: PathLike) -> PointCloud:
    """
    Read an ASCII PLY point cloud with x y z and optional nx ny nz.

    Raises:
        CorruptFile: on a malformed header or body.
    """
    lines = read_text(path, "ascii").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CorruptFile(f"{path}: missing ply magic")
    count = None
    props: List[str] = []
    body_start = None
    for i, line in enumerate(lines[1:], 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] in ("format", "element") and len(parts) < 3:
            raise CorruptFile(f"{path}:{i + 1}: short {parts[0]} line")
        if parts[0] == "format" and parts[1] != "ascii":
            raise CorruptFile(f"{path}: only ascii PLY is supported")
        if parts[0] == "element" and parts[1] == "vertex":
            try:
                count = int(parts[2])
            except ValueError as e:
                raise CorruptFile(f"{path}:{i + 1}: {e}") from e
        elif parts[0] == "property" and count is not None:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if count is None or body_start is None:
        raise CorruptFile(f"{path}: incomplete header")
    if props[:3] != ["x", "y", "z"]:
        raise CorruptFile(f"{path}: first properties must be x y z")
    rows = [r for r in lines[body_start : body_start + count] if r.strip()]
    if len(rows) != count:
        raise CorruptFile(f"{path}: expected {count} vertices, found {len(rows)}")
    try:
        data = np.array([[float(a) for a in r.split()] for r in rows]).reshape(count, -1)
    except ValueError as e:
        raise CorruptFile(f"{path}: {e}") from e
    if data.shape[1] != len(props):
        raise CorruptFile(f"{path}: {data.shape[1]} columns for {len(props)} properties")
    normals = None
    if props[3:6] == ["nx", "ny", "nz"]:
        normals = data[:, 3:6]
    return PointCloud(data[:, :3], normals)


def write_shape_spec(path: PathLike, spec: ShapeSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def read_shape_spec(path: PathLike) -> ShapeSpec:
    """
    Raises:
        CorruptFile: if the file is not a JSON object.
        InvalidParams: if a field is missing or out of range.
    """
    try:
        d = json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise CorruptFile(f"{path}: {e}") from e
    if not isinstance(d, dict):
        raise CorruptFile(f"{path}: expected a JSON object")
    return ShapeSpec.from_dict(d).validate()
