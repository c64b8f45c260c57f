"""Orthographic z-buffer view rasters and the rendering L1 loss.

A view raster maps every image pixel to the texel it shows (or -1 for
background).  With that map fixed, rendering a texture is a gather, and the
L1 loss gradient is a scatter-add back into the texture.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .mesh import UvMesh
from .raster import ShapeMapStack, barycentric_2d


@dataclass
class Camera:
    center: np.ndarray
    direction: np.ndarray      # viewing direction, camera -> scene
    up: np.ndarray
    half_extent: float

    def basis(self):
        f = np.asarray(self.direction, dtype=np.float64)
        f = f / np.linalg.norm(f)
        up = np.asarray(self.up, dtype=np.float64)
        r = np.cross(f, up)
        if np.linalg.norm(r) < 1e-8:
            r = np.cross(f, np.array([1.0, 0.0, 0.0]) if abs(f[0]) < 0.9 else np.array([0.0, 0.0, 1.0]))
        r /= np.linalg.norm(r)
        return r, np.cross(r, f), f


@dataclass
class ViewRaster:
    texel: np.ndarray          # (R, R) flat texel index, -1 = background
    tri_id: np.ndarray         # (R, R) triangle hit, -1 = background
    camera: Camera

    @property
    def resolution(self) -> int:
        return self.texel.shape[0]

    def render(self, texture: np.ndarray) -> np.ndarray:
        """(C, R, R) image of ``texture``; background pixels are 0."""
        flat = np.asarray(texture).reshape(texture.shape[0], -1)
        img = np.zeros((texture.shape[0],) + self.texel.shape)
        hit = self.texel >= 0
        img[:, hit] = flat[:, self.texel[hit]]
        return img


def rasterize_view(mesh: UvMesh, maps: ShapeMapStack, camera: Camera, res: int) -> ViewRaster:
    r, u, f = camera.basis()
    rel = mesh.vertices - camera.center
    sx, sy, depth = rel @ r, rel @ u, rel @ f
    # pixel-space positions (column, row) of every vertex
    px = (sx / camera.half_extent + 1.0) * 0.5 * res
    py = (1.0 - sy / camera.half_extent) * 0.5 * res
    zbuf = np.full((res, res), np.inf)
    tri_id = np.full((res, res), -1, dtype=np.int64)
    bary = np.zeros((res, res, 3))
    for t, (a, b, c) in enumerate(mesh.triangles):
        P = np.array([[px[a], py[a]], [px[b], py[b]], [px[c], py[c]]])
        lo, hi = P.min(0), P.max(0)
        c0, c1 = max(0, int(np.floor(lo[0] - 0.5))), min(res - 1, int(np.ceil(hi[0] - 0.5)))
        r0, r1 = max(0, int(np.floor(lo[1] - 0.5))), min(res - 1, int(np.ceil(hi[1] - 0.5)))
        if c1 < c0 or r1 < r0:
            continue
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        rr, cc = rr.reshape(-1), cc.reshape(-1)
        w = barycentric_2d(np.stack([cc + 0.5, rr + 0.5], 1), P[0], P[1], P[2])
        if w is None:  # zero screen area
            continue
        inside = (w >= -1e-12).all(axis=1)
        rr, cc, w = rr[inside], cc[inside], w[inside]
        z = w @ depth[[a, b, c]]
        closer = z < zbuf[rr, cc]
        rr, cc, w, z = rr[closer], cc[closer], w[closer], z[closer]
        zbuf[rr, cc] = z
        tri_id[rr, cc] = t
        bary[rr, cc] = w
    texel = np.full((res, res), -1, dtype=np.int64)
    hit = tri_id >= 0
    if hit.any():
        w = np.clip(bary[hit], 0.0, 1.0)
        w /= w.sum(1, keepdims=True)
        uv = np.einsum("nk,nkd->nd", w, mesh.corner_uvs[tri_id[hit]])
        texel[hit] = maps.texel_of_uv(uv)
    return ViewRaster(texel, tri_id, camera)


def random_cameras(mesh: UvMesh, n_views: int, rng: np.random.Generator, margin: float = 1.05):
    center, radius = mesh.bounding_sphere()
    cams = []
    for _ in range(n_views):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        cams.append(Camera(center.copy(), -d, np.array([0.0, 1.0, 0.0]), max(radius, 1e-6) * margin))
    return cams


def build_view_rasters(mesh: UvMesh, maps: ShapeMapStack, n_views: int = 4, img_res: int = 128,
                       seed=0) -> list[ViewRaster]:
    """Rasterise ``n_views`` random orthographic views placed on the bounding sphere."""
    rng = np.random.default_rng(seed)
    return [rasterize_view(mesh, maps, cam, img_res) for cam in random_cameras(mesh, n_views, rng)]


def crop_offsets(rasters, crop: int, rng: np.random.Generator | None):
    out = []
    for v in rasters:
        res = v.resolution
        if crop > res:
            raise ContractError(f"crop {crop} exceeds view resolution {res}")
        if rng is None:
            out.append(((res - crop) // 2, (res - crop) // 2))
        else:
            out.append((int(rng.integers(res - crop + 1)), int(rng.integers(res - crop + 1))))
    return out


def render_l1_and_grad(view_rasters, predicted: np.ndarray, gt: np.ndarray, crop: int,
                       rng: np.random.Generator | None = None, offsets=None):
    """Mean absolute error between cropped renders of ``predicted`` and ``gt``.

    Returns ``(loss, grad)`` where ``grad`` has the shape of ``predicted``.  The
    pixel-to-texel maps are constants, so the gradient is the scatter-add of
    ``sign(pred - gt) / N`` into the texels each pixel reads.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    C = predicted.shape[0]
    pf, gf = predicted.reshape(C, -1), gt.reshape(C, -1)
    grad = np.zeros_like(pf)
    if offsets is None:
        offsets = crop_offsets(view_rasters, crop, rng)
    n = len(view_rasters) * C * crop * crop
    total = 0.0
    for view, (oy, ox) in zip(view_rasters, offsets):
        idx = view.texel[oy:oy + crop, ox:ox + crop].reshape(-1)
        idx = idx[idx >= 0]
        if idx.size == 0:
            continue
        diff = pf[:, idx] - gf[:, idx]
        total += np.abs(diff).sum()
        s = np.sign(diff) / n
        for ch in range(C):
            grad[ch] += np.bincount(idx, weights=s[ch], minlength=pf.shape[1])
    return total / n, grad.reshape(predicted.shape)
