"""Texture-space fills: KNN colour interpolation and per-region smoothing."""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..errors import ContractError
from .raster import ShapeMapStack
from .sampling import SurfacePointSet

IDW_EPS = 1e-8
FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def knn_fill(colored: SurfacePointSet, maps: ShapeMapStack, k: int = 3) -> np.ndarray:
    """Colour every valid texel from the ``k`` nearest coloured points in 3D.

    Weights are ``1 / (d + 1e-8)``, normalised.  Texels that points project to
    then take that point's colour directly (first point wins on collisions).
    Returns a ``(3, H, W)`` array, zero on invalid texels.
    """
    if colored.colors is None:
        raise ContractError("point set carries no colours")
    n = len(colored)
    if not 1 <= k <= n:
        raise ContractError(f"k={k} needs at least {k} coloured points, have {n}")
    colors = np.asarray(colored.colors, dtype=np.float64)
    out = np.zeros((3, maps.H, maps.W))
    valid = maps.valid
    if not valid.any():
        return out
    query = maps.coord[:, valid].T
    dist, idx = cKDTree(colored.positions).query(query, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    w = 1.0 / (dist + IDW_EPS)
    w /= w.sum(axis=1, keepdims=True)
    out[:, valid] = np.einsum("nk,nkc->cn", w, colors[idx])
    if colored.texel is not None:
        texel = np.asarray(colored.texel)
        keep = texel >= 0
        uniq, first = np.unique(texel[keep], return_index=True)
        flat = out.reshape(3, -1)
        flat[:, uniq] = colors[keep][first].T
    return out


def label_components(mask: np.ndarray):
    """4-connected component labels (0 = background) and component count."""
    labels, count = ndimage.label(np.asarray(mask) > 0.5, structure=FOUR_CONNECTED)
    return labels, count


def smooth_map(maps: ShapeMapStack, texture: np.ndarray) -> np.ndarray:
    """Replace each 4-connected valid region by its mean colour.

    The mean is taken relative to the region's first texel so that an already
    uniform region is reproduced bit-for-bit.
    """
    texture = np.asarray(texture, dtype=np.float64)
    labels, count = label_components(maps.mask)
    out = np.zeros_like(texture)
    if count == 0:
        return out
    flat_lab = labels.reshape(-1)
    sel = flat_lab > 0
    lab = flat_lab[sel] - 1
    sizes = np.bincount(lab, minlength=count)
    _, first_in_sel = np.unique(lab, return_index=True)
    first = np.flatnonzero(sel)[first_in_sel]
    for c in range(texture.shape[0]):
        chan = texture[c].reshape(-1)
        ref = chan[first]
        mean = ref + np.bincount(lab, weights=chan[sel] - ref[lab], minlength=count) / sizes
        res = out[c].reshape(-1)
        res[sel] = mean[lab]
    return out
