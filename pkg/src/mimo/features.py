"""
A module computing the ground-truth spatial features of points relative to a
mesh, and building the training datasets of the implicit field.

The four targets of a query x are:

    occ   1 iff x lies strictly inside the mesh
    sdf   signed distance, negative inside
    escf  spherical-harmonic coefficients of the directional coverage
          f(ω) = [a ray from x along ω hits the mesh within range R]
    cdd   v_d · v_p, v_d the unit vector from x to its closest surface point

Classes:
    FeatureSample: Targets of one query.
    DatasetConfig: How queries and observed clouds are drawn.
    FeatureDataset: All samples of one shape with its observed cloud.

Functions:
    occupancy_oracle, scf_coverage, escf_oracle, cdd_oracle: Single-query oracles.
    compute_targets: Batch oracle for all four targets.
    scf_power_spectrum: Per-degree power of ESCF coefficients.
    build_shape_dataset, build_dataset: Dataset builders.
    query_split: Held-out split of a dataset.
    write_dataset, read_dataset: Manifest + record files on disk.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from utils.seeding import derive_seed, rng_for

from .bvh import SpatialIndex
from .errors import (
    CorruptFile,
    InvalidCount,
    InvalidParams,
    MimoError,
    OnSurface,
    ShapeError,
)
from .geometry import PointCloud, TriMesh, jitter, look_at
from .meshio import read_bytes, read_ply, read_text, write_ply
from .records import RecordArrays, decode_records, encode_records
from .render import render_views, sample_surface
from .sh import ShBasis, make_quadrature
from .shapes import DEFAULT_RESOLUTION, ShapeSpec, generate_shape
from .types import ViewMode

logger = logging.getLogger(__name__)

ON_SURFACE_TOL = 1e-9
QUERY_CHUNK = 64
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class FeatureSample:
    """Targets of one query point."""

    x: np.ndarray
    occ: int
    sdf: float
    escf: np.ndarray
    cdd: float


@dataclass(frozen=True)
class DatasetConfig:
    """
    Attributes:
        samples_per_shape (int): Queries per shape.
        view (ViewMode): Observed cloud from a surface sample or depth renders.
        observed_points (int): Size of the observed cloud (renders are subsampled).
        cameras (Tuple[Tuple[float, float, float], ...]): Camera eyes of the
            partial view, all looking at the origin.
        image_size (int): Render width and height in pixels.
        degree (int): ESCF harmonic degree L.
        directions (int): Coverage quadrature directions.
        coverage_scale (float): R = coverage_scale × bounding radius.
        principal_direction (Tuple[float, float, float]): v_p.
        near_sigma (float): Std of near-surface query offsets.
        near_fraction (float): Share of near-surface queries.
        padding (float): Uniform queries fill the bounding box grown by this.
        jitter_sigma (float): Gaussian noise on the observed cloud.
        mesh_resolution (int): Grid resolution of procedural meshes.
    """

    samples_per_shape: int = 2048
    view: ViewMode = ViewMode.FULL
    observed_points: int = 1024
    cameras: Tuple[Tuple[float, float, float], ...] = ((1.2, 0.0, 0.8),)
    image_size: int = 64
    degree: int = 5
    directions: int = 1024
    coverage_scale: float = 2.0
    principal_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    near_sigma: float = 0.025
    near_fraction: float = 0.5
    padding: float = 0.1
    jitter_sigma: float = 0.0
    mesh_resolution: int = DEFAULT_RESOLUTION

    def validate(self) -> "DatasetConfig":
        if self.samples_per_shape < 1:
            raise InvalidParams("samples_per_shape", "must be >= 1")
        if self.observed_points < 8:
            raise InvalidParams("observed_points", "must be >= 8")
        if self.degree < 0:
            raise InvalidParams("degree", "must be >= 0")
        if self.coverage_scale <= 0:
            raise InvalidParams("coverage_scale", "must be > 0")
        if not 0 <= self.near_fraction <= 1:
            raise InvalidParams("near_fraction", "must lie in [0, 1]")
        if self.near_sigma <= 0 or self.padding < 0 or self.jitter_sigma < 0:
            raise InvalidParams("near_sigma", "sigma must be > 0, padding and jitter >= 0")
        if abs(np.linalg.norm(self.principal_direction) - 1.0) > 1e-9:
            raise InvalidParams("principal_direction", "must be a unit vector")
        if self.view == ViewMode.PARTIAL and not self.cameras:
            raise InvalidParams("cameras", "partial view needs at least one camera")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view"] = self.view.value
        d["cameras"] = [list(c) for c in self.cameras]
        d["principal_direction"] = list(self.principal_direction)
        return d

    @staticmethod
    def from_dict(d: dict) -> "DatasetConfig":
        d = dict(d)
        if "view" in d:
            try:
                d["view"] = ViewMode(d["view"])
            except ValueError as e:
                raise InvalidParams("view", f"unknown view mode {d['view']!r}") from e
        if "cameras" in d:
            d["cameras"] = tuple(tuple(float(a) for a in c) for c in d["cameras"])
        if "principal_direction" in d:
            d["principal_direction"] = tuple(float(a) for a in d["principal_direction"])
        try:
            return DatasetConfig(**d)
        except TypeError as e:
            raise InvalidParams("dataset", str(e)) from e

    def basis(self) -> ShBasis:
        return ShBasis.build(self.degree, make_quadrature(self.directions, 2 * self.degree))


@dataclass(frozen=True)
class FeatureDataset:
    """
    Samples of one shape.

    Attributes:
        shape_id (str): Identifier used in file names and errors.
        spec (Optional[ShapeSpec]): Procedural spec, if the mesh came from one.
        observed (PointCloud): Encoder input.
        x, occ, sdf, escf, cdd (np.ndarray): Sample columns.
        coverage_range (float): R used for the coverage targets.
        config (DatasetConfig): Generation settings.
        seed (int): Shape-level seed.
        closest_dirs (Optional[np.ndarray]): v_d per sample, kept in memory
            for rotation augmentation.
    """

    shape_id: str
    spec: Optional[ShapeSpec]
    observed: PointCloud
    x: np.ndarray
    occ: np.ndarray
    sdf: np.ndarray
    escf: np.ndarray
    cdd: np.ndarray
    coverage_range: float
    config: DatasetConfig
    seed: int
    closest_dirs: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def degree(self) -> int:
        return self.config.degree

    def sample(self, i: int) -> FeatureSample:
        return FeatureSample(self.x[i], int(self.occ[i]), float(self.sdf[i]), self.escf[i], float(self.cdd[i]))

    def samples(self) -> Iterator[FeatureSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def subset(self, idx: np.ndarray) -> "FeatureDataset":
        idx = np.asarray(idx, dtype=np.int64)
        dirs = None if self.closest_dirs is None else self.closest_dirs[idx]
        return replace(
            self,
            x=self.x[idx],
            occ=self.occ[idx],
            sdf=self.sdf[idx],
            escf=self.escf[idx],
            cdd=self.cdd[idx],
            closest_dirs=dirs,
        )

    def with_closest_dirs(self, mesh: TriMesh) -> "FeatureDataset":
        """Attach v_d recomputed from the shape mesh."""
        p, dist, _ = SpatialIndex(mesh).closest_points(self.x)
        return replace(self, closest_dirs=(p - self.x) / dist[:, None])

    def digest(self) -> str:
        """Content hash of the samples and observed cloud."""
        h = hashlib.sha256()
        for a in (self.observed.points, self.x, self.occ, self.sdf, self.escf, self.cdd):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# oracles


def occupancy_oracle(index: SpatialIndex, x) -> int:
    """
    1 iff x lies strictly inside the mesh.

    Raises:
        NonWatertight: if the mesh is not edge-manifold.
    """
    sd = index.signed_distances(np.asarray(x, dtype=np.float64).reshape(1, 3))[0]
    return int(sd < 0)


def scf_coverage(index: SpatialIndex, x, basis_or_dirs, coverage_range: float) -> np.ndarray:
    """
    Binary directional coverage of x.

    Args:
        index (SpatialIndex): Mesh index.
        x: Query point.
        basis_or_dirs: ShBasis, SphereQuadrature or (n, 3) directions.
        coverage_range (float): R > 0.

    Returns:
        np.ndarray: (n,) values in {0, 1}, one per quadrature direction.
    """
    dirs = _directions(basis_or_dirs)
    return coverage_batch(index, np.asarray(x, dtype=np.float64).reshape(1, 3), dirs, coverage_range)[0]


def coverage_batch(
    index: SpatialIndex, x: np.ndarray, directions: np.ndarray, coverage_range: float
) -> np.ndarray:
    """(N, n) coverage of N queries over n directions."""
    if not coverage_range > 0:
        raise InvalidParams("R", "coverage range must be > 0")
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    k = len(directions)
    out = np.zeros((len(x), k))
    for s in range(0, len(x), QUERY_CHUNK):
        q = x[s : s + QUERY_CHUNK]
        o = np.repeat(q, k, axis=0)
        d = np.tile(directions, (len(q), 1))
        out[s : s + len(q)] = index.rays_blocked(o, d, coverage_range).reshape(len(q), k)
    return out


def escf_oracle(index: SpatialIndex, x, basis: ShBasis, coverage_range: float) -> np.ndarray:
    """
    Coefficients c_{l,m} = Σ_k w_k f(ω_k) Y_{l,m}(ω_k) of the coverage of x.

    Returns:
        np.ndarray: ((L+1)²,) coefficients, (l, m) lexicographic.
    """
    return basis.project(scf_coverage(index, x, basis, coverage_range))


def cdd_oracle(index: SpatialIndex, x, v_p) -> float:
    """
    Inner product of the unit direction to the closest surface point with v_p.

    Raises:
        OnSurface: if x lies within 1e-9 of the surface.
    """
    p, dist, _ = index.closest_points(np.asarray(x, dtype=np.float64).reshape(1, 3))
    if dist[0] <= ON_SURFACE_TOL:
        raise OnSurface(f"query {np.asarray(x).tolist()} lies on the surface")
    v_d = (p[0] - np.asarray(x, dtype=np.float64)) / dist[0]
    return float(np.clip(v_d @ np.asarray(v_p, dtype=np.float64), -1.0, 1.0))


def scf_power_spectrum(escf: np.ndarray, degree: int) -> np.ndarray:
    """Per-degree power Σ_m c_{l,m}², shape (..., L+1)."""
    c = np.asarray(escf, dtype=np.float64)
    if c.shape[-1] != (degree + 1) ** 2:
        raise InvalidParams("L", f"{c.shape[-1]} coefficients do not match degree {degree}")
    return np.stack(
        [np.sum(c[..., l * l : (l + 1) ** 2] ** 2, axis=-1) for l in range(degree + 1)], axis=-1
    )


def compute_targets(
    index: SpatialIndex,
    x: np.ndarray,
    basis: ShBasis,
    coverage_range: float,
    v_p,
) -> Tuple[RecordArrays, np.ndarray]:
    """
    All four targets for a batch of queries.

    Returns:
        Tuple[RecordArrays, np.ndarray]: target columns and v_d (N, 3).

    Raises:
        OnSurface: if a query lies on the surface.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    p, dist, _ = index.closest_points(x)
    if np.any(dist <= ON_SURFACE_TOL):
        raise OnSurface(f"{int(np.sum(dist <= ON_SURFACE_TOL))} queries lie on the surface")
    inside = index.contains(x)
    sdf = np.where(inside, -dist, dist)
    v_d = (p - x) / dist[:, None]
    cdd = np.clip(v_d @ np.asarray(v_p, dtype=np.float64), -1.0, 1.0)
    cov = coverage_batch(index, x, basis.quadrature.directions, coverage_range)
    escf = basis.project(cov)
    return RecordArrays(x, inside.astype(np.int64), sdf, escf, cdd), v_d


def _directions(obj) -> np.ndarray:
    if isinstance(obj, ShBasis):
        return obj.quadrature.directions
    if hasattr(obj, "directions"):
        return obj.directions
    return np.asarray(obj, dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# dataset builder


def observe(
    mesh: TriMesh, config: DatasetConfig, seed: int, index: Optional[SpatialIndex] = None
) -> PointCloud:
    """Observed encoder input of a mesh under `config.view`."""
    if config.view == ViewMode.FULL:
        cloud = sample_surface(mesh, config.observed_points, seed)
    else:
        cams = [look_at(eye) for eye in config.cameras]
        cloud = render_views(mesh, cams, config.image_size, config.image_size, index=index)
        if len(cloud) > config.observed_points:
            keep = np.sort(
                np.random.default_rng(seed).choice(len(cloud), config.observed_points, replace=False)
            )
            cloud = PointCloud(cloud.points[keep], cloud.normals[keep])
    if config.jitter_sigma > 0:
        cloud = jitter(cloud, config.jitter_sigma, seed)
    return cloud


def _draw_queries(
    mesh: TriMesh, index: SpatialIndex, n: int, config: DatasetConfig, seed: int
) -> np.ndarray:
    n_near = int(round(n * config.near_fraction))
    rng = rng_for(seed, "queries")
    lo, hi = mesh.bounds()
    lo, hi = lo - config.padding, hi + config.padding
    parts = []
    if n_near:
        surf = sample_surface(mesh, n_near, derive_seed(seed, "near"))
        parts.append(surf.points + rng.normal(0.0, config.near_sigma, (n_near, 3)))
    if n - n_near:
        parts.append(rng.uniform(lo, hi, (n - n_near, 3)))
    x = np.concatenate(parts)
    for _ in range(100):
        _, dist, _ = index.closest_points(x)
        bad = dist <= ON_SURFACE_TOL
        if not np.any(bad):
            break
        x[bad] = rng.uniform(lo, hi, (int(bad.sum()), 3))
    return x


def build_shape_dataset(
    mesh: TriMesh,
    shape_id: str,
    config: DatasetConfig,
    seed: int,
    spec: Optional[ShapeSpec] = None,
    basis: Optional[ShBasis] = None,
) -> FeatureDataset:
    """
    Observed cloud and labeled queries of one mesh.

    Args:
        mesh (TriMesh): Watertight surface.
        shape_id (str): Identifier.
        config (DatasetConfig): Generation settings.
        seed (int): Shape-level seed.
        spec (Optional[ShapeSpec]): Spec the mesh came from.
        basis (Optional[ShBasis]): Prebuilt harmonic basis of config.degree.

    Returns:
        FeatureDataset: Deterministic in (mesh, config, seed).
    """
    config.validate()
    basis = basis or config.basis()
    index = SpatialIndex(mesh)
    index.check_watertight()
    observed = observe(mesh, config, derive_seed(seed, "observed"), index)
    x = _draw_queries(mesh, index, config.samples_per_shape, config, seed)
    coverage_range = config.coverage_scale * mesh.bounding_radius()
    targets, v_d = compute_targets(index, x, basis, coverage_range, config.principal_direction)
    logger.debug("%s: %d samples, %.1f%% inside", shape_id, len(x), 100.0 * targets.occ.mean())
    return FeatureDataset(
        shape_id=shape_id,
        spec=spec,
        observed=observed,
        x=targets.x,
        occ=targets.occ,
        sdf=targets.sdf,
        escf=targets.escf,
        cdd=targets.cdd,
        coverage_range=coverage_range,
        config=config,
        seed=seed,
        closest_dirs=v_d,
    )


def build_dataset(
    specs: Sequence[ShapeSpec], config: DatasetConfig, seed: int, verbose: bool = False
) -> List[FeatureDataset]:
    """
    Generate every shape and its samples. Each shape draws from its own
    seed-derived stream, so results do not depend on processing order.

    Raises:
        ShapeError: wrapping any geometry error, with the shape id attached.
    """
    config.validate()
    if not specs:
        raise InvalidCount("at least one shape is required")
    basis = config.basis()
    out = []
    for i, spec in enumerate(tqdm(specs, desc="shapes", disable=not verbose)):
        try:
            mesh = generate_shape(spec, config.mesh_resolution)
            out.append(
                build_shape_dataset(mesh, spec.shape_id, config, derive_seed(seed, i), spec, basis)
            )
        except MimoError as e:
            raise ShapeError(spec.shape_id, e) from e
    return out


def query_split(
    dataset: FeatureDataset, held_out_fraction: float, seed: int
) -> Tuple[FeatureDataset, FeatureDataset]:
    """
    Split the queries of a dataset into (train, held-out) parts.

    Raises:
        InvalidParams: if the fraction leaves either part empty.
    """
    n = len(dataset)
    k = int(round(n * held_out_fraction))
    if not 0 < k < n:
        raise InvalidParams("held_out_fraction", f"{held_out_fraction} leaves an empty split of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[k:])), dataset.subset(np.sort(perm[:k]))


# ---------------------------------------------------------------------------
# persistence

PathLike = Union[str, Path]


def write_dataset(directory: PathLike, datasets: Sequence[FeatureDataset], seed: int) -> Path:
    """
    Write manifest.json plus one record file and one observed-cloud PLY per shape.

    Returns:
        Path: The manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not datasets:
        raise InvalidCount("nothing to write")
    config = datasets[0].config
    shapes = []
    for ds in datasets:
        if ds.config != config:
            raise InvalidParams("config", "all shapes of one dataset share one config")
        rec = f"{ds.shape_id}.mfds"
        ply = f"{ds.shape_id}.ply"
        (directory / rec).write_bytes(
            encode_records(RecordArrays(ds.x, ds.occ, ds.sdf, ds.escf, ds.cdd))
        )
        write_ply(directory / ply, ds.observed)
        shapes.append(
            {
                "shape_id": ds.shape_id,
                "spec": None if ds.spec is None else ds.spec.to_dict(),
                "seed": ds.seed,
                "coverage_range": ds.coverage_range,
                "count": len(ds),
                "records": rec,
                "observed": ply,
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "config": config.to_dict(),
        "shapes": shapes,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(directory: PathLike) -> List[FeatureDataset]:
    """
    Load a dataset written by write_dataset.

    Raises:
        CorruptFile: on a malformed manifest or record file.
    """
    directory = Path(directory)
    path = directory / "manifest.json" if directory.is_dir() else directory
    directory = path.parent
    try:
        manifest = json.loads(read_text(path))
        if manifest.get("version") != MANIFEST_VERSION:
            raise CorruptFile(f"unsupported manifest version: {manifest.get('version')}")
        config = DatasetConfig.from_dict(manifest["config"])
        entries = manifest["shapes"]
    except (json.JSONDecodeError, KeyError, AttributeError) as e:
        raise CorruptFile(f"{path}: {e}") from e
    return [_read_entry(directory, path, i, entry, config) for i, entry in enumerate(entries)]


def _read_entry(directory: Path, manifest: Path, i: int, entry, config: DatasetConfig) -> FeatureDataset:
    try:
        arrays = decode_records(read_bytes(directory / entry["records"]), config.degree)
        if len(arrays.x) != entry["count"]:
            raise CorruptFile(f"{entry['records']}: {len(arrays.x)} records, manifest says {entry['count']}")
        spec = None if entry["spec"] is None else ShapeSpec.from_dict(entry["spec"])
        return FeatureDataset(
            shape_id=entry["shape_id"],
            spec=spec,
            observed=read_ply(directory / entry["observed"]),
            x=arrays.x,
            occ=arrays.occ,
            sdf=arrays.sdf,
            escf=arrays.escf,
            cdd=arrays.cdd,
            coverage_range=float(entry["coverage_range"]),
            config=config,
            seed=int(entry["seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, MimoError):
            raise
        raise CorruptFile(f"{manifest}: shape entry {i}: {e}") from e
