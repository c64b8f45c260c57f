"""UV-space rasterisation of shape maps (mask, normal and coordinate channels).

Texel ``(i, j)`` has its centre at ``u = (j + 0.5) / W``, ``v = (i + 0.5) / H``.
Channel arrays are channels-first: ``(C, H, W)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mesh import UvMesh

log = logging.getLogger(__name__)

_EDGE_EPS = 1e-12
_INTERIOR_EPS = 1e-9


class UVOverlapWarning(UserWarning):
    pass


@dataclass
class ShapeMapStack:
    mask: np.ndarray          # (H, W) float64 in {0, 1}
    normal: np.ndarray        # (3, H, W)
    coord: np.ndarray         # (3, H, W)
    tri_id: np.ndarray        # (H, W) int, -1 where invalid
    bary: np.ndarray          # (3, H, W)
    extra: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return self.mask.shape[0]

    @property
    def W(self) -> int:
        return self.mask.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.mask > 0.5

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def x_shape(self) -> np.ndarray:
        """7-channel geometric condition ``[normal, mask, coord]``."""
        return np.concatenate([self.normal, self.mask[None], self.coord], axis=0)

    def valid_coords(self) -> np.ndarray:
        """(N, 3) coordinates of valid texels in row-major order."""
        return self.coord[:, self.valid].T

    def valid_flat_index(self) -> np.ndarray:
        return np.flatnonzero(self.valid.reshape(-1))

    def nearest_valid_index(self) -> np.ndarray:
        """(H, W) flat index of the nearest valid texel (itself when valid)."""
        cached = self.extra.get("_nearest")
        if cached is None:
            if self.n_valid == 0:
                cached = np.full(self.mask.shape, -1, dtype=np.int64)
            else:
                _, (ii, jj) = ndimage.distance_transform_edt(~self.valid, return_indices=True)
                cached = (ii * self.W + jj).astype(np.int64)
            self.extra["_nearest"] = cached
        return cached

    def texel_of_uv(self, uv: np.ndarray) -> np.ndarray:
        """Flat index of the valid texel used for a UV lookup.

        The UV is quantised to the texel containing it and snapped to the
        nearest valid texel, so lookups on chart borders stay inside the chart.
        """
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        j = np.clip(np.floor(uv[:, 0] * self.W).astype(np.int64), 0, self.W - 1)
        i = np.clip(np.floor(uv[:, 1] * self.H).astype(np.int64), 0, self.H - 1)
        return self.nearest_valid_index()[i, j]


def barycentric_2d(p, a, b, c):
    """Barycentric weights of points ``p`` (N, 2) in triangle (a, b, c)."""
    v0, v1 = b - a, c - a
    d = v0[0] * v1[1] - v0[1] * v1[0]
    if d == 0:
        return None
    q = p - a
    w1 = (q[:, 0] * v1[1] - q[:, 1] * v1[0]) / d
    w2 = (v0[0] * q[:, 1] - v0[1] * q[:, 0]) / d
    return np.stack([1.0 - w1 - w2, w1, w2], axis=1)


def empty_maps(H: int, W: int) -> ShapeMapStack:
    return ShapeMapStack(np.zeros((H, W)), np.zeros((3, H, W)), np.zeros((3, H, W)),
                         np.full((H, W), -1, dtype=np.int64), np.zeros((3, H, W)))


def rasterize_shape_maps(mesh: UvMesh, H: int, W: int) -> ShapeMapStack:
    """Rasterise the UV atlas; the first triangle covering a texel centre wins."""
    maps = empty_maps(H, W)
    tri_id = maps.tri_id
    bary = np.zeros((H, W, 3))
    overlaps = 0
    uvs = mesh.corner_uvs
    for f in range(mesh.n_triangles):
        a, b, c = uvs[f]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        j0 = max(0, int(np.floor(lo[0] * W - 0.5)))
        j1 = min(W - 1, int(np.ceil(hi[0] * W - 0.5)))
        i0 = max(0, int(np.floor(lo[1] * H - 0.5)))
        i1 = min(H - 1, int(np.ceil(hi[1] * H - 0.5)))
        if j1 < j0 or i1 < i0:
            continue
        ii, jj = np.mgrid[i0:i1 + 1, j0:j1 + 1]
        ii, jj = ii.reshape(-1), jj.reshape(-1)
        p = np.stack([(jj + 0.5) / W, (ii + 0.5) / H], axis=1)
        w = barycentric_2d(p, a, b, c)
        if w is None:
            continue
        inside = (w >= -_EDGE_EPS).all(axis=1)
        if not inside.any():
            continue
        ii, jj, w = ii[inside], jj[inside], w[inside]
        taken = tri_id[ii, jj] >= 0
        if taken.any():
            strict = (w[taken] > _INTERIOR_EPS).all(axis=1)
            overlaps += int(strict.sum())
        free = ~taken
        ii, jj, w = ii[free], jj[free], w[free]
        tri_id[ii, jj] = f
        bary[ii, jj] = np.clip(w, 0.0, 1.0) / np.clip(w, 0.0, 1.0).sum(1, keepdims=True)
    if overlaps:
        warnings.warn(f"{overlaps} texel(s) covered by overlapping UV triangles; "
                      "first triangle kept", UVOverlapWarning, stacklevel=2)

    valid = tri_id >= 0
    maps.mask[valid] = 1.0
    maps.bary = np.moveaxis(bary, -1, 0)
    fill_from_barycentrics(mesh, maps)
    return maps


def fill_from_barycentrics(mesh: UvMesh, maps: ShapeMapStack) -> None:
    """(Re)compute coord and normal channels from stored triangle ids and weights."""
    valid = maps.tri_id >= 0
    tri = maps.tri_id[valid]
    w = maps.bary[:, valid].T                       # (N, 3)
    corners = mesh.triangles[tri]                   # (N, 3)
    coord = np.einsum("nk,nkd->nd", w, mesh.vertices[corners])
    nrm = np.einsum("nk,nkd->nd", w, mesh.normals[corners])
    length = np.linalg.norm(nrm, axis=1, keepdims=True)
    bad = length[:, 0] < 1e-12
    if bad.any():
        p = mesh.vertices[mesh.triangles[tri[bad]]]
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        nrm[bad] = fn
        length[bad] = np.linalg.norm(fn, axis=1, keepdims=True)
    nrm = nrm / np.where(length > 0, length, 1.0)
    maps.coord = np.zeros((3,) + maps.mask.shape)
    maps.normal = np.zeros((3,) + maps.mask.shape)
    maps.coord[:, valid] = coord.T
    maps.normal[:, valid] = nrm.T
    maps.extra.pop("_nearest", None)


_XYZ = ("x", "y", "z")


def save_maps(path, maps: ShapeMapStack, meta: dict | None = None) -> None:
    from ..io import write_puvd
    planes = {"mask": maps.mask}
    planes.update({f"normal.{a}": maps.normal[i] for i, a in enumerate(_XYZ)})
    planes.update({f"coord.{a}": maps.coord[i] for i, a in enumerate(_XYZ)})
    planes["tri_id"] = maps.tri_id
    planes.update({f"bary.{i}": maps.bary[i] for i in range(3)})
    for name, arr in maps.extra.items():
        if not name.startswith("_"):
            for i in range(arr.shape[0]):
                planes[f"{name}.{i}"] = arr[i]
    write_puvd(path, planes, meta, maps.H, maps.W)


def load_maps(path) -> ShapeMapStack:
    """Read maps written by :func:`save_maps` (values come back as float32 precision)."""
    from ..io import read_puvd
    planes, _, _ = read_puvd(path)
    f64 = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
    maps = ShapeMapStack(
        f64(planes.pop("mask")),
        np.stack([f64(planes.pop(f"normal.{a}")) for a in _XYZ]),
        np.stack([f64(planes.pop(f"coord.{a}")) for a in _XYZ]),
        np.asarray(planes.pop("tri_id")).astype(np.int64),
        np.stack([f64(planes.pop(f"bary.{i}")) for i in range(3)]),
    )
    groups: dict[str, list] = {}
    for name in planes:
        base, _, idx = name.rpartition(".")
        groups.setdefault(base, []).append((int(idx), name))
    for base, items in groups.items():
        maps.extra[base] = np.stack([f64(planes[n]) for _, n in sorted(items)])
    return maps
