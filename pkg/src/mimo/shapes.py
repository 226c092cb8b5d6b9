"""
A module generating the procedural shape families and analytic test meshes.

Every family is described by a signed distance function in its local frame
(opening along +z). The function is sampled on a regular grid covering
[−0.5, 0.5]³ after the analytic bounding box has been centered, and the
zero level set is extracted with marching cubes. Generation is a pure
function of the ShapeSpec parameters.

Classes:
    ParamRange: Valid and sampling range of one shape parameter.
    ShapeSpec: Category, named parameters and seed of one instance.

Functions:
    generate_shape: Watertight mesh of a ShapeSpec.
    shape_landmarks: Named ground-truth points of a ShapeSpec.
    scale_spec: Instance with every length parameter scaled.
    default_spec, random_spec: ShapeSpec constructors.
    icosphere, box_mesh: Analytic fixtures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, NamedTuple, Tuple

import numpy as np

from .errors import InvalidParams
from .geometry import TriMesh
from .marching import extract_surface
from .types import Category

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 64
MAX_EXTENT = 0.9


class ParamRange(NamedTuple):
    """Valid interval, default and whether the value scales with the object."""

    lo: float
    hi: float
    default: float
    length: bool = True


PARAMS: Dict[Category, Dict[str, ParamRange]] = {
    Category.MUG: {
        "radius": ParamRange(0.12, 0.30, 0.22),
        "height": ParamRange(0.30, 0.80, 0.50),
        "wall": ParamRange(0.03, 0.08, 0.045),
        "bottom": ParamRange(0.03, 0.10, 0.05),
        "handle_radius": ParamRange(0.0, 0.06, 0.035),
        "handle_span": ParamRange(0.06, 0.20, 0.13),
        "handle_height": ParamRange(-0.10, 0.10, 0.0),
    },
    Category.BOWL: {
        "radius": ParamRange(0.20, 0.42, 0.35),
        "depth": ParamRange(0.30, 0.60, 0.45, length=False),
        "wall": ParamRange(0.03, 0.08, 0.04),
    },
    Category.BOTTLE: {
        "radius": ParamRange(0.10, 0.25, 0.15),
        "body_height": ParamRange(0.25, 0.60, 0.42),
        "neck_ratio": ParamRange(0.20, 0.60, 0.35, length=False),
        "neck_height": ParamRange(0.08, 0.30, 0.18),
    },
}


@dataclass(frozen=True)
class ShapeSpec:
    """
    One procedural instance.

    Attributes:
        category (Category): Shape family.
        params (Mapping[str, float]): Family parameters; missing names take
            their defaults.
        seed (int): Seed the parameters were drawn with (identity only).
    """

    category: Category
    params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        try:
            cat = Category(self.category)
        except ValueError as e:
            raise InvalidParams("category", f"unknown category {self.category!r}") from e
        table = PARAMS[cat]
        unknown = sorted(set(self.params) - set(table))
        if unknown:
            raise InvalidParams(unknown[0], f"not a {cat.value} parameter")
        merged = {k: float(self.params.get(k, r.default)) for k, r in table.items()}
        object.__setattr__(self, "category", cat)
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def shape_id(self) -> str:
        return f"{self.category.value}-{self.seed:05d}"

    def validate(self) -> "ShapeSpec":
        """
        Check every parameter range and the family's fit constraints.

        Raises:
            InvalidParams: naming the offending parameter.
        """
        for name, r in PARAMS[self.category].items():
            v = self.params[name]
            if not np.isfinite(v) or v < r.lo or v > r.hi:
                raise InvalidParams(name, f"{v} outside [{r.lo}, {r.hi}]")
        _CONSTRAINTS[self.category](self.params)
        return self

    def to_dict(self) -> dict:
        return {"category": self.category.value, "params": dict(self.params), "seed": self.seed}

    @staticmethod
    def from_dict(d: Mapping) -> "ShapeSpec":
        for key in ("category", "params", "seed"):
            if key not in d:
                raise InvalidParams(key, "missing from shape spec")
        return ShapeSpec(d["category"], dict(d["params"]), int(d["seed"]))


def _mug_constraints(p: Mapping[str, float]) -> None:
    r, h, w, tube = p["radius"], p["height"], p["wall"], p["handle_radius"]
    if w >= 0.5 * r:
        raise InvalidParams("wall", "must be below half the radius")
    if p["bottom"] >= 0.5 * h:
        raise InvalidParams("bottom", "must be below half the height")
    if h > MAX_EXTENT:
        raise InvalidParams("height", f"exceeds {MAX_EXTENT}")
    width = 2 * r + (p["handle_span"] + tube if tube > 0 else 0.0)
    if width > MAX_EXTENT:
        raise InvalidParams("handle_span", f"object width {width:.3f} exceeds {MAX_EXTENT}")
    if tube > 0:
        if abs(p["handle_height"]) + p["handle_span"] + tube > 0.5 * h:
            raise InvalidParams("handle_height", "handle leaves the body height")
        if tube * tube > r * w - 0.25 * w * w:
            raise InvalidParams("handle_radius", "handle thicker than the wall can hold")
        if p["handle_span"] <= tube:
            raise InvalidParams("handle_span", "must exceed handle_radius")


def _bowl_constraints(p: Mapping[str, float]) -> None:
    if p["wall"] >= 0.3 * p["radius"]:
        raise InvalidParams("wall", "must be below 0.3 × radius")
    if 2 * p["radius"] + p["wall"] > MAX_EXTENT:
        raise InvalidParams("radius", f"outer diameter exceeds {MAX_EXTENT}")


def _bottle_constraints(p: Mapping[str, float]) -> None:
    rb = p["radius"]
    top = p["body_height"] + rb * (1 - p["neck_ratio"]) + p["neck_height"]
    if top > MAX_EXTENT:
        raise InvalidParams("neck_height", f"total height {top:.3f} exceeds {MAX_EXTENT}")
    if 2 * rb > MAX_EXTENT:
        raise InvalidParams("radius", f"diameter exceeds {MAX_EXTENT}")


_CONSTRAINTS: Dict[Category, Callable[[Mapping[str, float]], None]] = {
    Category.MUG: _mug_constraints,
    Category.BOWL: _bowl_constraints,
    Category.BOTTLE: _bottle_constraints,
}


def default_spec(category: Category | str, seed: int = 0) -> ShapeSpec:
    """ShapeSpec with every parameter at its default."""
    return ShapeSpec(Category(category), {}, seed)


def random_spec(category: Category | str, seed: int) -> ShapeSpec:
    """
    Draw parameters uniformly from the middle half of every valid range,
    redrawing until the family constraints hold.

    Args:
        category (Category | str): Shape family.
        seed (int): Seed of the draw; recorded in the ShapeSpec.

    Returns:
        ShapeSpec: A valid instance.
    """
    cat = Category(category)
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        params = {}
        for name, r in PARAMS[cat].items():
            quarter = 0.25 * (r.hi - r.lo)
            params[name] = float(rng.uniform(r.lo + quarter, r.hi - quarter))
        spec = ShapeSpec(cat, params, seed)
        try:
            return spec.validate()
        except InvalidParams:
            continue
    return default_spec(cat, seed).validate()


def scale_spec(spec: ShapeSpec, factor: float) -> ShapeSpec:
    """
    Instance with every length parameter multiplied by `factor`; ratios are kept.

    Raises:
        InvalidParams: if the scaled instance leaves the valid ranges.
    """
    if not factor > 0:
        raise InvalidParams("factor", "must be > 0")
    table = PARAMS[spec.category]
    params = {
        k: v * factor if table[k].length else v for k, v in spec.params.items()
    }
    return ShapeSpec(spec.category, params, spec.seed).validate()


# ---------------------------------------------------------------------------
# signed distance functions (local frame, negative inside)


def _polygon_sdf(p: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Signed distance of 2D points (N, 2) to a closed simple polygon."""
    d = np.sum((p - poly[0]) ** 2, axis=1)
    s = np.ones(len(p))
    n = len(poly)
    for i in range(n):
        vi, vj = poly[i], poly[i - 1]
        e = vj - vi
        w = p - vi
        t = np.clip((w @ e) / (e @ e), 0.0, 1.0)
        b = w - t[:, None] * e
        d = np.minimum(d, np.sum(b * b, axis=1))
        c1 = p[:, 1] >= vi[1]
        c2 = p[:, 1] < vj[1]
        c3 = e[0] * w[:, 1] > e[1] * w[:, 0]
        flip = (c1 & c2 & c3) | (~c1 & ~c2 & ~c3)
        s = np.where(flip, -s, s)
    return s * np.sqrt(d)


def _revolve(profile: np.ndarray) -> np.ndarray:
    """Mirror a right-half profile (ρ > 0) into a closed symmetric polygon."""
    mirrored = profile[::-1] * np.array([-1.0, 1.0])
    return np.concatenate([profile, mirrored])


def _revolution_sdf(p: np.ndarray, profile: np.ndarray) -> np.ndarray:
    rho = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
    return _polygon_sdf(np.stack([rho, p[:, 2]], axis=1), _revolve(profile))


def _mug_sdf(p: np.ndarray, q: Mapping[str, float]) -> np.ndarray:
    r, h, w, b = q["radius"], q["height"], q["wall"], q["bottom"]
    profile = np.array(
        [
            [r, -0.5 * h],
            [r, 0.5 * h],
            [r - w, 0.5 * h],
            [r - w, -0.5 * h + b],
        ]
    )
    body = _revolution_sdf(p, profile)
    tube = q["handle_radius"]
    if tube <= 0:
        return body
    zh, span = q["handle_height"], q["handle_span"]
    ring = np.sqrt((p[:, 0] - r) ** 2 + (p[:, 2] - zh) ** 2) - span
    torus = np.sqrt(ring**2 + p[:, 1] ** 2) - tube
    handle = np.maximum(torus, (r - 0.5 * w) - p[:, 0])
    return np.minimum(body, handle)


def _bowl_sdf(p: np.ndarray, q: Mapping[str, float]) -> np.ndarray:
    radius, w = q["radius"], q["wall"]
    cut = -radius + 2.0 * radius * q["depth"]
    shell = np.abs(np.linalg.norm(p, axis=1) - radius) - 0.5 * w
    return np.maximum(shell, p[:, 2] - cut)


def _bottle_sdf(p: np.ndarray, q: Mapping[str, float]) -> np.ndarray:
    rb, hb = q["radius"], q["body_height"]
    rn = rb * q["neck_ratio"]
    shoulder = hb + (rb - rn)
    top = shoulder + q["neck_height"]
    profile = np.array([[rb, 0.0], [rb, hb], [rn, shoulder], [rn, top]])
    return _revolution_sdf(p, profile)


_SDF = {
    Category.MUG: _mug_sdf,
    Category.BOWL: _bowl_sdf,
    Category.BOTTLE: _bottle_sdf,
}


def _local_bounds(spec: ShapeSpec) -> Tuple[np.ndarray, np.ndarray]:
    q = spec.params
    if spec.category == Category.MUG:
        r, h = q["radius"], q["height"]
        xmax = r + q["handle_span"] + q["handle_radius"] if q["handle_radius"] > 0 else r
        return np.array([-r, -r, -0.5 * h]), np.array([xmax, r, 0.5 * h])
    if spec.category == Category.BOWL:
        outer = q["radius"] + 0.5 * q["wall"]
        cut = -q["radius"] + 2.0 * q["radius"] * q["depth"]
        e = outer if cut >= 0 else float(np.sqrt(outer**2 - cut**2))
        return np.array([-e, -e, -outer]), np.array([e, e, cut])
    rb = q["radius"]
    top = q["body_height"] + rb * (1 - q["neck_ratio"]) + q["neck_height"]
    return np.array([-rb, -rb, 0.0]), np.array([rb, rb, top])


def _center(spec: ShapeSpec) -> np.ndarray:
    lo, hi = _local_bounds(spec)
    return 0.5 * (lo + hi)


def shape_sdf(spec: ShapeSpec, points: np.ndarray) -> np.ndarray:
    """
    Analytic signed distance (negative inside) of the centered instance.

    Args:
        spec (ShapeSpec): Validated instance.
        points (np.ndarray): (N, 3) query points in the centered frame.

    Returns:
        np.ndarray: (N,) signed distances.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) + _center(spec)
    return _SDF[spec.category](p, spec.params)


def generate_shape(spec: ShapeSpec, resolution: int = DEFAULT_RESOLUTION) -> TriMesh:
    """
    Build the watertight mesh of a procedural instance.

    Args:
        spec (ShapeSpec): The instance.
        resolution (int): Grid cells per axis over [−0.5, 0.5].

    Returns:
        TriMesh: Outward-oriented mesh, opening along +z, bounding box
        centered at the origin.

    Raises:
        InvalidParams: if a parameter is out of range (named in the error).
    """
    spec.validate()
    if resolution < 8:
        raise InvalidParams("resolution", "must be >= 8")
    axis = np.linspace(-0.5, 0.5, resolution + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    values = -shape_sdf(spec, grid.reshape(-1, 3)).reshape(grid.shape[:3])
    mesh = extract_surface(values, 0.0, (-0.5, -0.5, -0.5), 1.0 / resolution)
    logger.debug(
        "generated %s: %d vertices, %d faces", spec.shape_id, len(mesh.vertices), len(mesh.faces)
    )
    return mesh


def shape_landmarks(spec: ShapeSpec) -> Dict[str, np.ndarray]:
    """
    Named parametric points of an instance, in the same centered frame as
    generate_shape. Corresponding names mark corresponding places across
    instances of one family.
    """
    q = spec.params
    if spec.category == Category.MUG:
        r, h, w = q["radius"], q["height"], q["wall"]
        marks = {
            "rim_front": (-(r - 0.5 * w), 0.0, 0.5 * h),
            "rim_back": (r - 0.5 * w, 0.0, 0.5 * h),
            "bottom_center": (0.0, 0.0, -0.5 * h),
        }
        if q["handle_radius"] > 0:
            marks["handle_tip"] = (
                r + q["handle_span"] + q["handle_radius"],
                0.0,
                q["handle_height"],
            )
    elif spec.category == Category.BOWL:
        radius = q["radius"]
        cut = -radius + 2.0 * radius * q["depth"]
        rho = float(np.sqrt(max(radius**2 - cut**2, 0.0)))
        marks = {
            "rim_front": (-rho, 0.0, cut),
            "bottom_center": (0.0, 0.0, -radius - 0.5 * q["wall"]),
        }
    else:
        rb = q["radius"]
        top = q["body_height"] + rb * (1 - q["neck_ratio"]) + q["neck_height"]
        marks = {
            "neck_top": (0.0, 0.0, top),
            "body_side": (rb, 0.0, 0.5 * q["body_height"]),
            "bottom_center": (0.0, 0.0, 0.0),
        }
    c = _center(spec)
    return {k: np.asarray(v, dtype=np.float64) - c for k, v in marks.items()}


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """
    Subdivided icosahedron with vertices projected onto the sphere.

    Args:
        subdivisions (int): Number of 1-to-4 splits.
        radius (float): Sphere radius.

    Returns:
        TriMesh: Outward-oriented sphere mesh.
    """
    if subdivisions < 0:
        raise InvalidParams("subdivisions", "must be >= 0")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]  # fmt: skip
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    v = np.array(verts, dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(-1) + len(v)
        nf = len(f)
        a, b, c = m[:nf], m[nf : 2 * nf], m[2 * nf :]
        v = np.concatenate([v, mid])
        f = np.concatenate(
            [
                np.stack([f[:, 0], a, c], axis=1),
                np.stack([f[:, 1], b, a], axis=1),
                np.stack([f[:, 2], c, b], axis=1),
                np.stack([a, b, c], axis=1),
            ]
        )
    return TriMesh(v * radius, f)


def box_mesh(extents=(1.0, 1.0, 1.0)) -> TriMesh:
    """Axis-aligned box centered at the origin, 12 outward triangles."""
    e = 0.5 * np.asarray(extents, dtype=np.float64)
    if np.any(e <= 0):
        raise InvalidParams("extents", "must be > 0")
    v = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64
    ) * e
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )  # fmt: skip
    return TriMesh(v, f)
