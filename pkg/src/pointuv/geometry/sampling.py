"""Surface point sets: area-weighted sampling and farthest point sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .mesh import UvMesh
from .raster import ShapeMapStack


@dataclass
class SurfacePointSet:
    positions: np.ndarray          # (K, 3)
    normals: np.ndarray            # (K, 3)
    tri_id: np.ndarray             # (K,)
    bary: np.ndarray               # (K, 3)
    colors: np.ndarray | None = None   # (K, 3)
    texel: np.ndarray | None = None    # (K,) flat texel index

    def __len__(self):
        return len(self.positions)

    @property
    def z_coord(self) -> np.ndarray:
        """(6, K) positions with attached normals."""
        return np.concatenate([self.positions, self.normals], axis=1).T

    def subset(self, idx) -> "SurfacePointSet":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return SurfacePointSet(self.positions[idx], self.normals[idx], self.tri_id[idx],
                               self.bary[idx], pick(self.colors), pick(self.texel))


def _point_normals(mesh, tri, w):
    corners = mesh.triangles[tri]
    n = np.einsum("nk,nkd->nd", w, mesh.normals[corners])
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(length > 0, length, 1.0)


def sample_surface(mesh: UvMesh, M: int, rng: np.random.Generator) -> SurfacePointSet:
    """Draw ``M`` points uniformly by area over the surface."""
    areas = mesh.triangle_areas()
    if mesh.n_triangles == 0 or areas.sum() <= 0:
        raise ContractError("cannot sample an empty or zero-area mesh")
    tri = rng.choice(mesh.n_triangles, size=M, p=areas / areas.sum())
    r1, r2 = rng.random(M), rng.random(M)
    s = np.sqrt(r1)
    w = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    pos = np.einsum("nk,nkd->nd", w, mesh.vertices[mesh.triangles[tri]])
    return SurfacePointSet(pos, _point_normals(mesh, tri, w), tri, w)


def reconstruct_positions(mesh: UvMesh, points: SurfacePointSet) -> np.ndarray:
    return np.einsum("nk,nkd->nd", points.bary, mesh.vertices[mesh.triangles[points.tri_id]])


def fps_indices(points: np.ndarray, K: int, start: int) -> np.ndarray:
    """Greedy max-min selection of ``K`` rows of ``points`` starting at ``start``.

    Ties in the max step go to the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= K <= n:
        raise ContractError(f"cannot select {K} points from a pool of {n}")
    chosen = np.empty(K, dtype=np.int64)
    chosen[0] = start
    d = np.sum((points - points[start]) ** 2, axis=1)
    for k in range(1, K):
        nxt = int(np.argmax(d))
        chosen[k] = nxt
        d = np.minimum(d, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def farthest_point_sample(pool, K: int, seed) -> np.ndarray | SurfacePointSet:
    """Farthest point sampling from a seeded random start.

    ``pool`` is either an ``(N, 3)`` array (returns indices) or a
    :class:`SurfacePointSet` (returns the selected subset).
    """
    rng = np.random.default_rng(seed)
    if isinstance(pool, SurfacePointSet):
        if K > len(pool):
            raise ContractError(f"cannot select {K} points from a pool of {len(pool)}")
        start = int(rng.integers(len(pool)))
        return pool.subset(fps_indices(pool.positions, K, start))
    pool = np.asarray(pool, dtype=np.float64)
    if K > len(pool):
        raise ContractError(f"cannot select {K} points from a pool of {len(pool)}")
    return fps_indices(pool, K, int(rng.integers(len(pool))))


def point_uvs(mesh: UvMesh, points: SurfacePointSet) -> np.ndarray:
    return np.einsum("nk,nkd->nd", points.bary, mesh.corner_uvs[points.tri_id])


def project_to_texels(mesh: UvMesh, maps: ShapeMapStack, points: SurfacePointSet) -> np.ndarray:
    """Flat texel index for each point through the UV map."""
    return maps.texel_of_uv(point_uvs(mesh, points))


def sample_points(mesh: UvMesh, maps: ShapeMapStack, K: int, seed, oversample: int = 8) -> SurfacePointSet:
    """Area-weighted candidate pool of ``oversample * K`` points reduced by FPS."""
    rng = np.random.default_rng(seed)
    pool = sample_surface(mesh, max(K, oversample * K), rng)
    pts = farthest_point_sample(pool, K, rng.integers(2**63))
    pts.texel = project_to_texels(mesh, maps, pts)
    return pts


def texel_points(maps: ShapeMapStack) -> SurfacePointSet:
    """Treat every valid texel as a surface point (used to simulate coarse maps)."""
    valid = maps.valid
    flat = maps.valid_flat_index()
    return SurfacePointSet(maps.coord[:, valid].T.copy(), maps.normal[:, valid].T.copy(),
                           maps.tri_id[valid].copy(), maps.bary[:, valid].T.copy(), texel=flat)


def save_points(path, points: SurfacePointSet, meta: dict | None = None) -> None:
    from ..io import write_puvd
    planes = {"positions": points.positions, "normals": points.normals,
              "tri_id": points.tri_id, "bary": points.bary}
    if points.colors is not None:
        planes["colors"] = points.colors
    if points.texel is not None:
        planes["texel"] = points.texel
    write_puvd(path, planes, meta)


def load_points(path) -> SurfacePointSet:
    from ..io import read_puvd
    planes, _, _ = read_puvd(path)
    f64 = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
    return SurfacePointSet(
        f64(planes["positions"]), f64(planes["normals"]),
        np.asarray(planes["tri_id"]).astype(np.int64), f64(planes["bary"]),
        f64(planes["colors"]) if "colors" in planes else None,
        np.asarray(planes["texel"]).astype(np.int64) if "texel" in planes else None,
    )
