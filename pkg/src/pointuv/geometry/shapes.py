"""Procedural meshes with hand-built UV atlases.

Every shape is assembled from charts.  A chart is a 3D patch with its own 2D
parameterisation; charts are packed into a grid of cells in [0, 1]^2 with a
margin so neighbouring charts never touch.  Vertices with identical positions
are merged afterwards, so chart borders become seam edges (shared 3D edge,
different UVs).
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from .mesh import UvMesh

SHAPES = ("cube", "cylinder", "torus", "icosphere", "quad", "two_chart_quad")


class _Chart:
    def __init__(self, points, params, tris, outward=None):
        self.points = np.asarray(points, dtype=np.float64)
        self.params = np.asarray(params, dtype=np.float64)
        tris = np.asarray(tris, dtype=np.int64)
        if outward is not None:
            p = self.points[tris]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            c = p.mean(1)
            flip = np.einsum("ij,ij->i", n, outward(c)) < 0
            tris = tris.copy()
            tris[flip] = tris[flip][:, [0, 2, 1]]
        self.tris = tris


def _grid(nu, nv):
    tris = []
    for i in range(nu):
        for j in range(nv):
            a = i * (nv + 1) + j
            b = (i + 1) * (nv + 1) + j
            tris += [[a, b, b + 1], [a, b + 1, a + 1]]
    return np.array(tris)


def _grid_params(nu, nv, u_range, v_range):
    u = np.linspace(*u_range, nu + 1)
    v = np.linspace(*v_range, nv + 1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return uu.reshape(-1), vv.reshape(-1)


def _cube_charts(n):
    charts = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            a1, a2 = (axis + 1) % 3, (axis + 2) % 3
            u, v = _grid_params(n, n, (-0.5, 0.5), (-0.5, 0.5))
            p = np.zeros((u.size, 3))
            p[:, axis] = 0.5 * sign
            p[:, a1] = u
            p[:, a2] = v
            charts.append(_Chart(p, np.stack([u, v], 1), _grid(n, n), lambda c: c))
    return charts


def _cylinder_charts(n, radius=0.5, height=1.0):
    charts = []
    segs = 4 * n
    th, y = _grid_params(segs, n, (0.0, 2 * math.pi), (-height / 2, height / 2))
    p = np.stack([radius * np.cos(th), y, radius * np.sin(th)], 1)

    def radial(c):
        return c * np.array([1.0, 0.0, 1.0])
    charts.append(_Chart(p, np.stack([th * radius, y], 1), _grid(segs, n), radial))
    for sign in (1.0, -1.0):
        pts = [[0.0, sign * height / 2, 0.0]]
        tris = []
        rings = max(1, n // 2)
        for r in range(1, rings + 1):
            rr = radius * r / rings
            for s in range(segs):
                a = 2 * math.pi * s / segs
                pts.append([rr * math.cos(a), sign * height / 2, rr * math.sin(a)])
        for s in range(segs):
            tris.append([0, 1 + s, 1 + (s + 1) % segs])
        for r in range(1, rings):
            o0, o1 = 1 + (r - 1) * segs, 1 + r * segs
            for s in range(segs):
                s1 = (s + 1) % segs
                tris += [[o0 + s, o1 + s, o1 + s1], [o0 + s, o1 + s1, o0 + s1]]
        pts = np.array(pts)
        charts.append(_Chart(pts, pts[:, [0, 2]], tris,
                             lambda c, s=sign: np.tile([0.0, s, 0.0], (len(c), 1))))
    return charts


def _torus_charts(n, R=0.5, r=0.2, n_charts=3):
    charts = []
    for k in range(n_charts):
        th0, th1 = 2 * math.pi * k / n_charts, 2 * math.pi * (k + 1) / n_charts
        th, ph = _grid_params(2 * n, 2 * n, (th0, th1), (0.0, 2 * math.pi))
        ring = R + r * np.cos(ph)
        p = np.stack([ring * np.cos(th), r * np.sin(ph), ring * np.sin(th)], 1)

        def out(c):
            centre = c * np.array([1.0, 0.0, 1.0])
            centre = centre / np.linalg.norm(centre, axis=1, keepdims=True) * R
            return c - centre
        charts.append(_Chart(p, np.stack([th * R, ph * r], 1), _grid(2 * n, 2 * n), out))
    return charts


def _icosahedron():
    t = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return v / np.linalg.norm(v, axis=1, keepdims=True), np.array(f)


def _icosphere_charts(n, radius=0.5):
    verts, faces = _icosahedron()
    charts = []
    for f in faces:
        a, b, c = verts[f]
        pts, params = [], []
        e1 = (b - a) / np.linalg.norm(b - a)
        nrm = np.cross(b - a, c - a)
        e2 = np.cross(nrm, e1)
        e2 /= np.linalg.norm(e2)
        index = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                w = np.array([n - i - j, i, j]) / n
                q = w[0] * a + w[1] * b + w[2] * c
                index[i, j] = len(pts)
                params.append([(q - a) @ e1, (q - a) @ e2])
                pts.append(radius * q / np.linalg.norm(q))
        tris = []
        for i in range(n):
            for j in range(n - i):
                tris.append([index[i, j], index[i + 1, j], index[i, j + 1]])
                if i + j < n - 1:
                    tris.append([index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]])
        charts.append(_Chart(pts, params, tris, lambda c: c))
    return charts


def _quad_charts(n, split):
    u, v = _grid_params(n, n, (0.0, 1.0), (0.0, 1.0))
    p = np.stack([u, v, np.zeros_like(u)], 1)
    up = lambda c: np.tile([0.0, 0.0, 1.0], (len(c), 1))  # noqa: E731
    if not split:
        return [_Chart(p, p[:, :2], _grid(n, n), up)]
    charts = []
    for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
        u, v = _grid_params(max(1, n // 2), n, (lo, hi), (0.0, 1.0))
        q = np.stack([u, v, np.zeros_like(u)], 1)
        charts.append(_Chart(q, q[:, :2], _grid(max(1, n // 2), n), up))
    return charts


def pack_charts(charts, padding: float = 2.0 / 64, fill: bool = False) -> UvMesh:
    """Place each chart in its own grid cell (anisotropically fitted) and merge
    coincident vertices.

    ``fill`` makes a single chart cover the whole unit square (no padding).
    """
    n = len(charts)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    cw, ch = 1.0 / cols, 1.0 / rows
    all_pts, all_uv, tris, chart_of = [], [], [], []
    offset = 0
    for k, chart in enumerate(charts):
        lo, hi = chart.params.min(0), chart.params.max(0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        local = (chart.params - lo) / span
        if fill and n == 1:
            uv = local
        else:
            cx, cy = (k % cols) * cw, (k // cols) * ch
            uv = np.stack([cx + padding + local[:, 0] * (cw - 2 * padding),
                           cy + padding + local[:, 1] * (ch - 2 * padding)], 1)
        all_pts.append(chart.points)
        all_uv.append(uv)
        tris.append(chart.tris + offset)
        chart_of.append(np.full(len(chart.tris), k))
        offset += len(chart.points)
    pts = np.concatenate(all_pts)
    uvs = np.concatenate(all_uv)
    tri_corners = np.concatenate(tris)
    key = np.round(pts * 1e9).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # order merged vertices by first appearance for stable output
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertices = pts[first[order]]
    triangles = rank[inverse[tri_corners]]
    return UvMesh(vertices, triangles, uvs, tri_corners, chart_id=np.concatenate(chart_of))


def make_shape(name: str, subdiv: int = 4) -> UvMesh:
    if name == "cube":
        return pack_charts(_cube_charts(subdiv))
    if name == "cylinder":
        return pack_charts(_cylinder_charts(subdiv))
    if name == "torus":
        return pack_charts(_torus_charts(subdiv))
    if name == "icosphere":
        return pack_charts(_icosphere_charts(max(1, subdiv // 2)))
    if name == "quad":
        return pack_charts(_quad_charts(subdiv, split=False), fill=True)
    if name == "two_chart_quad":
        return pack_charts(_quad_charts(subdiv, split=True))
    raise ConfigError(f"unknown shape {name!r}; choose from {', '.join(SHAPES)}")
