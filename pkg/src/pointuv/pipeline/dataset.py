"""Procedural textured-shape dataset used to train and evaluate the pipeline.

Every item pairs a procedural UV-mapped shape with a texture evaluated per
texel from its 3D coordinate (or, for one family, from its chart).  Colours
come from a handful of palettes drawn with skewed probabilities, which gives
the dataset the kind of colour bias style labels are meant to counter.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError, MissingArtifactError
from ..geometry import (ShapeMapStack, SurfacePointSet, UvMesh, build_view_rasters, load_maps,
                        load_obj, load_points, make_shape, rasterize_shape_maps, sample_points,
                        save_maps, save_points, write_obj)
from ..io import read_kv, read_png, write_kv, write_png
from ..style import StyleModel, desk_scale_k
from .config import PipelineConfig, parse_floats

PALETTES = np.array([
    [[0.8, -0.6, -0.6], [0.9, 0.2, -0.7], [0.8, 0.7, 0.3]],     # warm
    [[-0.7, -0.3, 0.8], [-0.6, 0.5, 0.5], [-0.8, -0.7, 0.1]],   # cool
    [[-0.4, 0.7, -0.5], [0.2, 0.8, -0.2], [-0.6, 0.1, -0.7]],   # green
])


@dataclass
class DatasetItem:
    name: str
    shape: str
    family: str
    palette: int
    seed: int
    mesh: UvMesh
    maps: ShapeMapStack
    texture: np.ndarray            # (3, H, W), zero where mask = 0
    points: SurfacePointSet        # colours hold z_0
    style: int = -1
    views: list = field(default_factory=list, repr=False)

    @property
    def z0(self) -> np.ndarray:
        """(3, K) ground-truth point colours."""
        return self.points.colors.T


def _unit_direction(rng):
    d = rng.standard_normal(3)
    return d / np.linalg.norm(d)


def make_texture(family: str, maps: ShapeMapStack, mesh: UvMesh, colors: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Evaluate a texture family on every valid texel.

    ``colors`` is a (3, 3) block of palette colours; ``rng`` draws the
    family's geometric parameters (directions, frequencies, offsets).
    """
    valid = maps.valid
    xyz = maps.coord[:, valid].T
    c0, c1, c2 = colors
    if family == "chart_constant":
        if mesh.chart_id is None:
            raise ContractError("chart_constant textures need a mesh with chart labels")
        chart = mesh.chart_id[maps.tri_id[valid]]
        pick = rng.integers(0, 3, size=int(chart.max()) + 1)
        vals = colors[pick[chart]]
    elif family == "gradient":
        s = xyz @ _unit_direction(rng)
        lo, hi = s.min(), s.max()
        s = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
        vals = (1.0 - s)[:, None] * c0 + s[:, None] * c1
    elif family == "stripes":
        freq = rng.uniform(2.0, 4.0)
        band = np.floor(xyz @ _unit_direction(rng) * freq + rng.random()).astype(np.int64) % 2
        vals = np.where(band[:, None] == 0, c0, c2)
    elif family == "checker":
        freq = rng.uniform(2.0, 3.5)
        cell = np.floor(xyz * freq + rng.random(3)).astype(np.int64).sum(axis=1) % 2
        vals = np.where(cell[:, None] == 0, c0, c1)
    else:
        raise ConfigError(f"unknown texture family {family!r}")
    tex = np.zeros((3, maps.H, maps.W))
    tex[:, valid] = vals.T
    return tex


def _choice_probs(text, n, key):
    w = np.asarray(parse_floats(text, key), dtype=np.float64)
    if len(w) != n or (w < 0).any() or w.sum() <= 0:
        raise ConfigError(f"{key}: need {n} non-negative weights, got {text!r}")
    return w / w.sum()


class _ShapeCache:
    """Geometry shared by all items of one shape: mesh, maps and view rasters."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.store = {}

    def get(self, shape: str):
        if shape not in self.store:
            d = self.cfg.data
            mesh = make_shape(shape, d.subdiv)
            maps = rasterize_shape_maps(mesh, d.resolution, d.resolution)
            if d.points > maps.n_valid:
                raise ConfigError(f"data.points={d.points} exceeds the {maps.n_valid} valid texels of {shape}")
            views = build_view_rasters(mesh, maps, d.n_views, d.img_res, d.seed)
            self.store[shape] = (mesh, maps, views)
        return self.store[shape]


def generate_dataset(cfg: PipelineConfig, seed: int | None = None, n_items: int | None = None):
    """Build the procedural dataset and fit style labels on its point colours.

    Returns ``(items, style_model)``; ``style_model`` is None when style
    guidance is disabled.
    """
    d = cfg.data
    seed = d.seed if seed is None else seed
    n_items = d.n_items if n_items is None else n_items
    shapes = [s.strip() for s in d.shapes.split(",") if s.strip()]
    families = [s.strip() for s in d.families.split(",") if s.strip()]
    fam_p = _choice_probs(d.family_weights, len(families), "data.family_weights")
    pal_p = _choice_probs(d.palette_probs, len(PALETTES), "data.palette_probs")
    cache = _ShapeCache(cfg)
    root = np.random.SeedSequence(seed)
    items = []
    for i, child in enumerate(root.spawn(n_items)):
        rng = np.random.default_rng(child)
        shape = shapes[i % len(shapes)]
        mesh, maps, views = cache.get(shape)
        family = families[int(rng.choice(len(families), p=fam_p))]
        palette = int(rng.choice(len(PALETTES), p=pal_p))
        colors = PALETTES[palette][rng.permutation(3)]
        texture = make_texture(family, maps, mesh, colors, rng)
        item_seed = int(rng.integers(2**31))
        pts = sample_points(mesh, maps, d.points, item_seed, d.oversample)
        pts.colors = texture.reshape(3, -1)[:, pts.texel].T.copy()
        items.append(DatasetItem(f"item_{i:03d}", shape, family, palette, item_seed, mesh, maps,
                                 texture, pts, views=views))
    style = fit_style(items, cfg) if cfg.style.enabled else None
    return items, style


def fit_style(items, cfg: PipelineConfig) -> StyleModel:
    k = cfg.style.k_clusters or desk_scale_k(len(items))
    model = StyleModel(cfg.style.n_components, k)
    model.fit(np.stack([it.points.colors for it in items]), cfg.style.seed, cfg.style.max_iters)
    for it, label in zip(items, model.train_labels):
        it.style = int(label)
    return model


def save_dataset(items, root, style: StyleModel | None = None) -> None:
    os.makedirs(root, exist_ok=True)
    for it in items:
        d = os.path.join(root, it.name)
        os.makedirs(d, exist_ok=True)
        write_obj(it.mesh, os.path.join(d, "mesh.obj"))
        write_png(os.path.join(d, "texture.png"), it.texture)
        save_maps(os.path.join(d, "maps.puvd"), it.maps)
        save_points(os.path.join(d, "points.puvd"), it.points)
        write_kv(os.path.join(d, "meta.txt"), {"shape": it.shape, "family": it.family,
                                               "palette": it.palette, "seed": it.seed,
                                               "style": it.style})
    if style is not None:
        style.save(os.path.join(root, "style.puvd"))


def load_dataset(root, cfg: PipelineConfig, with_views: bool = True):
    """Read a dataset directory written by :func:`save_dataset`.

    Textures come back through 8-bit PNG, so point colours are re-read from
    the stored texture at each point's texel.
    """
    if not os.path.isdir(root):
        raise MissingArtifactError(f"{root}: dataset directory not found (produced by `pointuv make-dataset`)")
    names = sorted(n for n in os.listdir(root) if os.path.isdir(os.path.join(root, n)))
    if not names:
        raise MissingArtifactError(f"{root}: no dataset items (produced by `pointuv make-dataset`)")
    items, views_by_shape = [], {}
    for n in names:
        d = os.path.join(root, n)
        meta = read_kv(os.path.join(d, "meta.txt"))
        mesh = load_obj(os.path.join(d, "mesh.obj"))
        maps = load_maps(os.path.join(d, "maps.puvd"))
        texture = read_png(os.path.join(d, "texture.png")) * maps.mask[None]
        pts = load_points(os.path.join(d, "points.puvd"))
        pts.colors = texture.reshape(3, -1)[:, pts.texel].T.copy()
        shape = meta.get("shape", "mesh")
        views = []
        if with_views:
            if shape not in views_by_shape:
                views_by_shape[shape] = build_view_rasters(mesh, maps, cfg.data.n_views,
                                                           cfg.data.img_res, cfg.data.seed)
            views = views_by_shape[shape]
        items.append(DatasetItem(n, shape, meta.get("family", ""), int(meta.get("palette", -1)),
                                 int(meta.get("seed", 0)), mesh, maps, texture, pts,
                                 int(meta.get("style", -1)), views))
    return items
