"""
A module implementing the bounding-volume hierarchy over mesh triangles.

The hierarchy is stored in flat arrays and traversed with packets: every
stack entry carries a node and the indices of the queries still active in
it, so one Python step serves many queries. The per-triangle kernels work
elementwise, which makes BVH results bitwise equal to an exhaustive scan.

Classes:
    SpatialIndex: Read-only BVH answering closest-point, ray and parity queries.

Functions:
    closest_point, signed_distance, ray_hit: Single-query operations.
    closest_points, signed_distances, ray_hits: Batch operations.
    exhaustive_closest_point, exhaustive_closest_points: Brute-force scan.
    check_watertight: Edge-manifold check.
    closest_point_on_triangles: Elementwise point–triangle kernel.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMesh, InvalidParams, NonWatertight
from .geometry import TriMesh

logger = logging.getLogger(__name__)

LEAF_SIZE = 4
RAY_EPS = 1e-12
PARITY_EPS = 1e-9
CHUNK = 1 << 16

_PARITY_DIRECTIONS = np.array(
    [[1.0, 2.0, 3.0], [-3.0, 1.0, 2.0], [2.0, -3.0, 1.0], [1.0, 1.0, -3.0]]
)
_PARITY_DIRECTIONS /= np.linalg.norm(_PARITY_DIRECTIONS, axis=1, keepdims=True)


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
            u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
            u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
        ],
        axis=-1,
    )


def closest_point_on_triangles(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closest point on triangle (a, b, c) to p, pairwise over the leading axes
    (Voronoi-region walk of the triangle).

    Args:
        p (np.ndarray): (..., 3) query points.
        a, b, c (np.ndarray): (..., 3) triangle corners, broadcastable to p.

    Returns:
        Tuple[np.ndarray, np.ndarray]: closest points (..., 3) and squared
        distances (...,).
    """
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    in_c = (d6 >= 0) & (d5 <= d6)
    in_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    in_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        s_ab = d1 / (d1 - d3)
        s_ac = d2 / (d2 - d6)
        s_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        total = va + vb + vc
        denom = 1.0 / np.where(total == 0, 1.0, total)
    v = vb * denom
    w = vc * denom

    q = a + ab * v[..., None] + ac * w[..., None]
    q = np.where(in_bc[..., None], b + s_bc[..., None] * (c - b), q)
    q = np.where(in_ac[..., None], a + s_ac[..., None] * ac, q)
    q = np.where(in_c[..., None], c, q)
    q = np.where(in_ab[..., None], a + s_ab[..., None] * ab, q)
    q = np.where(in_b[..., None], b, q)
    q = np.where(in_a[..., None], a, q)

    diff = p - q
    return q, _dot(diff, diff)


def _ray_triangles(
    o: np.ndarray, d: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Ray–triangle intersection, pairwise over the leading axes.

    Returns:
        (t, valid, degenerate): hit distance, whether the ray hits the
        triangle at t > 0, and whether the hit is numerically ambiguous
        (near an edge or grazing).
    """
    e1 = b - a
    e2 = c - a
    pvec = _cross(d, e2)
    det = _dot(e1, pvec)
    scale = np.sqrt(_dot(e1, e1) * _dot(e2, e2))
    parallel = np.abs(det) <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(parallel, 1.0, det)
    tvec = o - a
    u = _dot(tvec, pvec) * inv
    qvec = _cross(tvec, e1)
    v = _dot(d, qvec) * inv
    t = _dot(e2, qvec) * inv
    w = 1.0 - u - v
    inside = (u >= 0) & (v >= 0) & (w >= 0)
    valid = ~parallel & inside & (t > RAY_EPS)
    near = (
        (np.abs(u) <= PARITY_EPS) | (np.abs(v) <= PARITY_EPS) | (np.abs(w) <= PARITY_EPS)
    ) & (u >= -PARITY_EPS) & (v >= -PARITY_EPS) & (w >= -PARITY_EPS)
    grazing = np.abs(det) <= 1e-9 * scale
    degenerate = ~parallel & (t > RAY_EPS) & (near | (grazing & inside))
    return t, valid, degenerate


class SpatialIndex:
    """
    Read-only BVH over the triangles of one mesh.

    Attributes:
        mesh (TriMesh): The indexed mesh.
        leaf_size (int): Maximum triangles per leaf.
    """

    def __init__(self, mesh: TriMesh, leaf_size: int = LEAF_SIZE):
        if len(mesh.faces) == 0:
            raise EmptyMesh("cannot index a mesh without triangles")
        if leaf_size < 1:
            raise InvalidParams("leaf_size", "must be >= 1")
        self.mesh = mesh
        self.leaf_size = leaf_size
        self._watertight: Optional[int] = None

        tri = mesh.triangles
        self._build(tri)
        ordered = tri[self.order]
        self._a = ordered[:, 0].copy()
        self._b = ordered[:, 1].copy()
        self._c = ordered[:, 2].copy()
        self._used = np.unique(mesh.faces)
        self._vertex_tree = cKDTree(mesh.vertices[self._used])
        logger.debug("indexed %d triangles in %d nodes", len(tri), len(self.node_lo))

    def _build(self, tri: np.ndarray) -> None:
        lo_t = tri.min(axis=1)
        hi_t = tri.max(axis=1)
        cent = tri.mean(axis=1)
        order = np.arange(len(tri))
        node_lo: List[np.ndarray] = []
        node_hi: List[np.ndarray] = []
        left: List[int] = []
        right: List[int] = []
        start: List[int] = []
        count: List[int] = []

        def new_node(s: int, e: int) -> int:
            ids = order[s:e]
            node_lo.append(lo_t[ids].min(axis=0))
            node_hi.append(hi_t[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(node_lo) - 1

        root = new_node(0, len(tri))
        stack = [root]
        while stack:
            n = stack.pop()
            s, e = start[n], start[n] + count[n]
            if e - s <= self.leaf_size:
                continue
            ids = order[s:e]
            extent = cent[ids].max(axis=0) - cent[ids].min(axis=0)
            axis = int(np.argmax(extent))
            ids = ids[np.argsort(cent[ids, axis], kind="stable")]
            order[s:e] = ids
            mid = s + (e - s) // 2
            left[n] = new_node(s, mid)
            right[n] = new_node(mid, e)
            count[n] = 0
            stack.extend([right[n], left[n]])

        self.order = order
        self.node_lo = np.array(node_lo)
        self.node_hi = np.array(node_hi)
        self.node_left = np.array(left, dtype=np.int64)
        self.node_right = np.array(right, dtype=np.int64)
        self.node_start = np.array(start, dtype=np.int64)
        self.node_count = np.array(count, dtype=np.int64)

    # ------------------------------------------------------------------
    # topology

    def check_watertight(self) -> None:
        """
        Raises:
            NonWatertight: if some edge is not shared by exactly two faces.
        """
        if self._watertight is None:
            _, counts = np.unique(self.mesh.edges(), axis=0, return_counts=True)
            self._watertight = int(np.count_nonzero(counts != 2))
        if self._watertight:
            raise NonWatertight(self._watertight)

    # ------------------------------------------------------------------
    # closest point

    def closest_points(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Closest surface points for a batch of queries.

        Args:
            x (np.ndarray): (N, 3) queries.

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]: points (N, 3),
            distances (N,) and nearest face indices (N,). Among equally near
            faces the lowest index wins.
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        n = len(x)
        vid = self._vertex_tree.query(x)[1]
        vid = np.asarray(vid, dtype=np.int64).reshape(n)
        best_p = self.mesh.vertices[self._used[vid]]
        diff = x - best_p
        best_d2 = _dot(diff, diff)
        best_f = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)

        stack: List[Tuple[int, np.ndarray]] = [(0, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            p = x[idx]
            gap = np.maximum(np.maximum(self.node_lo[node] - p, 0.0), p - self.node_hi[node])
            box_d2 = _dot(gap, gap)
            idx = idx[box_d2 <= best_d2[idx]]
            if not len(idx):
                continue
            if self.node_left[node] >= 0:
                stack.append((int(self.node_right[node]), idx))
                stack.append((int(self.node_left[node]), idx))
                continue
            s = self.node_start[node]
            e = s + self.node_count[node]
            fids = self.order[s:e]
            q, d2 = closest_point_on_triangles(
                x[idx][:, None, :], self._a[None, s:e], self._b[None, s:e], self._c[None, s:e]
            )
            m = d2.min(axis=1)
            fm = np.where(d2 == m[:, None], fids[None, :], np.iinfo(np.int64).max).min(axis=1)
            better = (m < best_d2[idx]) | ((m == best_d2[idx]) & (fm < best_f[idx]))
            if np.any(better):
                rows = np.nonzero(better)[0]
                col = np.argmax(fids[None, :] == fm[rows, None], axis=1)
                tgt = idx[rows]
                best_d2[tgt] = m[rows]
                best_f[tgt] = fm[rows]
                best_p[tgt] = q[rows, col]
        return best_p, np.sqrt(best_d2), best_f

    # ------------------------------------------------------------------
    # rays

    def _traverse_rays(
        self, o: np.ndarray, d: np.ndarray, max_t: float, mode: str
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(o)
        best_t = np.full(n, max_t, dtype=np.float64)
        best_f = np.full(n, -1, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        degenerate = np.zeros(n, dtype=bool)
        hit = np.zeros(n, dtype=bool)
        with np.errstate(divide="ignore"):
            inv = 1.0 / d

        stack: List[Tuple[int, np.ndarray]] = [(0, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            if mode == "any":
                idx = idx[~hit[idx]]
            if not len(idx):
                continue
            oi, ii = o[idx], inv[idx]
            with np.errstate(invalid="ignore"):
                t0 = (self.node_lo[node] - oi) * ii
                t1 = (self.node_hi[node] - oi) * ii
            bad = np.isnan(t0) | np.isnan(t1)
            tlo = np.where(bad, -np.inf, np.minimum(t0, t1))
            thi = np.where(bad, np.inf, np.maximum(t0, t1))
            tnear = tlo.max(axis=1)
            tfar = thi.min(axis=1)
            limit = best_t[idx] if mode == "first" else max_t
            idx = idx[(tnear <= tfar) & (tfar >= 0) & (tnear <= limit)]
            if not len(idx):
                continue
            if self.node_left[node] >= 0:
                stack.append((int(self.node_right[node]), idx))
                stack.append((int(self.node_left[node]), idx))
                continue
            s = self.node_start[node]
            e = s + self.node_count[node]
            t, valid, degen = _ray_triangles(
                o[idx][:, None, :],
                d[idx][:, None, :],
                self._a[None, s:e],
                self._b[None, s:e],
                self._c[None, s:e],
            )
            valid &= t <= max_t
            if mode == "count":
                counts[idx] += valid.sum(axis=1)
                degenerate[idx] |= (degen & (t <= max_t)).any(axis=1)
            elif mode == "any":
                hit[idx] |= valid.any(axis=1)
            else:
                fids = self.order[s:e]
                tt = np.where(valid, t, np.inf)
                m = tt.min(axis=1)
                fm = np.where(
                    (tt == m[:, None]) & valid, fids[None, :], np.iinfo(np.int64).max
                ).min(axis=1)
                cur_f = np.where(best_f[idx] < 0, np.iinfo(np.int64).max, best_f[idx])
                better = np.isfinite(m) & (
                    (m < best_t[idx]) | ((m == best_t[idx]) & (fm < cur_f))
                )
                best_t[idx[better]] = m[better]
                best_f[idx[better]] = fm[better]
        if mode == "any":
            return hit, best_f, degenerate
        if mode == "count":
            return counts, best_f, degenerate
        best_t[best_f < 0] = np.nan
        return best_t, best_f, degenerate

    def ray_hits(
        self, origins: np.ndarray, directions: np.ndarray, max_t: float = np.inf
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        First hits of a batch of rays.

        Args:
            origins (np.ndarray): (N, 3) ray origins.
            directions (np.ndarray): (N, 3) unit directions.
            max_t (float): Largest accepted hit distance.

        Returns:
            Tuple[np.ndarray, np.ndarray]: hit distances (NaN for a miss) and
            face indices (−1 for a miss).
        """
        o, d = _check_rays(origins, directions, max_t)
        ts, fs = [], []
        for s in range(0, len(o), CHUNK):
            t, f, _ = self._traverse_rays(o[s : s + CHUNK], d[s : s + CHUNK], max_t, "first")
            ts.append(t)
            fs.append(f)
        if not ts:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate(ts), np.concatenate(fs)

    def rays_blocked(
        self, origins: np.ndarray, directions: np.ndarray, max_t: float
    ) -> np.ndarray:
        """Whether each ray hits the mesh within (0, max_t]."""
        o, d = _check_rays(origins, directions, max_t)
        out = [
            self._traverse_rays(o[s : s + CHUNK], d[s : s + CHUNK], max_t, "any")[0]
            for s in range(0, len(o), CHUNK)
        ]
        return np.concatenate(out) if out else np.zeros(0, dtype=bool)

    # ------------------------------------------------------------------
    # inside / outside

    def contains(self, x: np.ndarray) -> np.ndarray:
        """
        Ray-parity inside test. A query whose ray grazes an edge, a vertex or a
        face plane is retried along the next fallback direction; if every
        direction is ambiguous the majority of the parities decides.

        Args:
            x (np.ndarray): (N, 3) queries.

        Returns:
            np.ndarray: (N,) booleans.

        Raises:
            NonWatertight: if the mesh is not edge-manifold.
        """
        self.check_watertight()
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        n = len(x)
        inside = np.zeros(n, dtype=bool)
        votes = np.zeros(n, dtype=np.int64)
        pending = np.arange(n)
        for k, direction in enumerate(_PARITY_DIRECTIONS):
            if not len(pending):
                break
            d = np.broadcast_to(direction, (len(pending), 3)).copy()
            counts = np.zeros(len(pending), dtype=np.int64)
            degen = np.zeros(len(pending), dtype=bool)
            for s in range(0, len(pending), CHUNK):
                c, _, g = self._traverse_rays(
                    x[pending[s : s + CHUNK]], d[s : s + CHUNK], np.inf, "count"
                )
                counts[s : s + CHUNK] = c
                degen[s : s + CHUNK] = g
            odd = counts % 2 == 1
            votes[pending] += np.where(odd, 1, -1)
            settled = ~degen
            inside[pending[settled]] = odd[settled]
            pending = pending[degen]
            if len(pending):
                logger.debug("parity direction %d ambiguous for %d queries", k, len(pending))
        inside[pending] = votes[pending] > 0
        return inside

    def signed_distances(self, x: np.ndarray) -> np.ndarray:
        """
        Signed distances, negative strictly inside.

        Raises:
            NonWatertight: if the mesh is not edge-manifold.
        """
        self.check_watertight()
        _, dist, _ = self.closest_points(x)
        inside = self.contains(x)
        return np.where(dist == 0, 0.0, np.where(inside, -dist, dist))


def _check_rays(
    origins: np.ndarray, directions: np.ndarray, max_t: float
) -> Tuple[np.ndarray, np.ndarray]:
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if o.shape != d.shape:
        raise InvalidParams("directions", "one direction per origin required")
    if not max_t > 0:
        raise InvalidParams("max_t", "must be > 0")
    if len(d) and np.abs(np.linalg.norm(d, axis=1) - 1.0).max() > 1e-9:
        raise InvalidParams("dir", "ray directions must be unit length")
    return o, d


def closest_point(index: SpatialIndex, x) -> Tuple[np.ndarray, float]:
    """Closest surface point to x and its distance."""
    p, dist, _ = index.closest_points(np.asarray(x, dtype=np.float64).reshape(1, 3))
    return p[0], float(dist[0])


def closest_points(index: SpatialIndex, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p, dist, _ = index.closest_points(x)
    return p, dist


def signed_distance(index: SpatialIndex, x) -> float:
    """Signed distance of x, negative strictly inside."""
    return float(index.signed_distances(np.asarray(x, dtype=np.float64).reshape(1, 3))[0])


def signed_distances(index: SpatialIndex, x: np.ndarray) -> np.ndarray:
    return index.signed_distances(x)


def ray_hit(index: SpatialIndex, origin, direction, max_t: float) -> Optional[float]:
    """
    Smallest t in (0, max_t] with origin + t·direction on the mesh, or None.

    Raises:
        InvalidParams: if direction is not unit length or max_t <= 0.
    """
    t, _ = index.ray_hits(
        np.asarray(origin, dtype=np.float64).reshape(1, 3),
        np.asarray(direction, dtype=np.float64).reshape(1, 3),
        max_t,
    )
    return None if np.isnan(t[0]) else float(t[0])


def ray_hits(
    index: SpatialIndex, origins: np.ndarray, directions: np.ndarray, max_t: float = np.inf
) -> np.ndarray:
    return index.ray_hits(origins, directions, max_t)[0]


def check_watertight(mesh: TriMesh) -> None:
    """
    Raises:
        NonWatertight: if some edge of `mesh` is not shared by exactly two faces.
    """
    _, counts = np.unique(mesh.edges(), axis=0, return_counts=True)
    bad = int(np.count_nonzero(counts != 2))
    if bad:
        raise NonWatertight(bad)


def exhaustive_closest_points(
    mesh: TriMesh, x: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Brute-force scan over every triangle, using the same kernel as the BVH.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: points, distances and the
        lowest-index nearest face per query.
    """
    if len(mesh.faces) == 0:
        raise EmptyMesh("mesh has no triangles")
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    pts = np.zeros_like(x)
    d2 = np.zeros(len(x))
    fid = np.zeros(len(x), dtype=np.int64)
    rows = max(1, CHUNK // len(tri))
    for s in range(0, len(x), rows):
        q, dd = closest_point_on_triangles(
            x[s : s + rows, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
        )
        j = np.argmin(dd, axis=1)
        r = np.arange(len(j))
        pts[s : s + rows] = q[r, j]
        d2[s : s + rows] = dd[r, j]
        fid[s : s + rows] = j
    return pts, np.sqrt(d2), fid


def exhaustive_closest_point(mesh: TriMesh, x) -> Tuple[np.ndarray, float]:
    p, dist, _ = exhaustive_closest_points(mesh, np.asarray(x).reshape(1, 3))
    return p[0], float(dist[0])
