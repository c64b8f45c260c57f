"""Seam detection and a colour-discontinuity metric across UV seams."""
from __future__ import annotations

import warnings

import numpy as np

from .mesh import UvMesh
from .raster import ShapeMapStack

UV_TOL = 1e-9


class NoSeamsWarning(UserWarning):
    pass


def seam_edges(mesh: UvMesh) -> np.ndarray:
    """Edges shared by two triangles whose UVs disagree along the edge.

    Returns ``(E, 2, 2, 2)``: for each seam edge, the UVs of its two endpoints
    as seen from side 0 and side 1 (``[side, endpoint, uv]``).
    """
    owners: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for f, tri in enumerate(mesh.triangles):
        for c in range(3):
            a, b = int(tri[c]), int(tri[(c + 1) % 3])
            key = (a, b) if a < b else (b, a)
            ca, cb = (c, (c + 1) % 3) if a < b else ((c + 1) % 3, c)
            owners.setdefault(key, []).append((f, ca, cb))
    corner_uv = mesh.corner_uvs
    out = []
    for key in sorted(owners):
        sides = owners[key]
        if len(sides) != 2:
            continue
        (f0, a0, b0), (f1, a1, b1) = sides
        s0 = np.stack([corner_uv[f0, a0], corner_uv[f0, b0]])
        s1 = np.stack([corner_uv[f1, a1], corner_uv[f1, b1]])
        if np.abs(s0 - s1).max() > UV_TOL:
            out.append(np.stack([s0, s1]))
    return np.array(out).reshape(-1, 2, 2, 2)


def seam_discrepancy(mesh: UvMesh, maps: ShapeMapStack, texture: np.ndarray,
                     samples_per_edge: int = 8, edges: np.ndarray | None = None) -> float:
    """Mean absolute colour difference between the two sides of every seam.

    Each seam edge is sampled at ``samples_per_edge`` evenly spaced interior
    points; each side reads the texture through its own chart.  Returns 0 and
    emits :class:`NoSeamsWarning` when the mesh has no seams.
    """
    if edges is None:
        edges = seam_edges(mesh)
    if len(edges) == 0:
        warnings.warn("mesh has no seam edges; seam discrepancy is 0", NoSeamsWarning, stacklevel=2)
        return 0.0
    s = (np.arange(samples_per_edge) + 0.5) / samples_per_edge
    # (E, side, S, 2)
    uv = (1.0 - s)[None, None, :, None] * edges[:, :, 0, None, :] + s[None, None, :, None] * edges[:, :, 1, None, :]
    flat = np.asarray(texture, dtype=np.float64).reshape(texture.shape[0], -1)
    t0 = maps.texel_of_uv(uv[:, 0].reshape(-1, 2))
    t1 = maps.texel_of_uv(uv[:, 1].reshape(-1, 2))
    return float(np.abs(flat[:, t0] - flat[:, t1]).mean())
