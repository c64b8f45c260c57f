"""End-to-end texturing of one mesh from trained checkpoints."""
from __future__ import annotations

import os

from ..errors import ConfigError, MissingArtifactError
from ..evalkit import EvalReport, gradient_energy
from ..geometry import load_obj, rasterize_shape_maps, sample_points, seam_discrepancy
from ..io import write_json, write_kv, write_png
from ..nets import load_checkpoint
from .coarse import pick_style, sample_coarse
from .config import PipelineConfig
from .fine import sample_fine


def load_stage(path, kind: str, producer: str):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: {kind} checkpoint not found (produced by `pointuv {producer}`)")
    model, meta = load_checkpoint(path)
    if meta.get("kind") != kind:
        raise ConfigError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")
    return model, meta


def texture_mesh(mesh, coarse_model, fine_model, fine_info: dict, style, seed, cfg: PipelineConfig):
    """Run both stages on an in-memory mesh.

    Returns ``(texture, x_coarse, maps, label)``; the fine stage is skipped
    when ``sample.fine_stage`` is off or ``fine_model`` is None.
    """
    res = cfg.data.resolution
    if fine_model is not None and int(fine_info.get("resolution", res)) != res:
        raise ConfigError(f"fine checkpoint was trained at {fine_info['resolution']}x"
                          f"{fine_info['resolution']} texels but data.resolution is {res}")
    maps = rasterize_shape_maps(mesh, res, res)
    if cfg.data.points > maps.n_valid:
        raise ConfigError(f"data.points={cfg.data.points} exceeds the mesh's {maps.n_valid} valid texels")
    pts = sample_points(mesh, maps, cfg.data.points, seed, cfg.data.oversample)
    label = pick_style(coarse_model, style, seed)
    x_coarse, _ = sample_coarse(coarse_model, maps, pts, label, seed, cfg)
    if cfg.sample.fine_stage and fine_model is not None:
        texture = sample_fine(fine_model, maps, x_coarse, cfg.sample.t_c, seed, cfg,
                              bool(fine_info.get("use_coarse", True)),
                              bool(fine_info.get("use_smooth", True)))
    else:
        texture = x_coarse * maps.mask
    return texture, x_coarse, maps, label


def generate(mesh_path, coarse_path, fine_path, style, seed, out_dir, cfg: PipelineConfig) -> dict:
    """Texture ``mesh_path`` and write ``texture.png``, ``coarse.png`` and a report."""
    if not os.path.exists(mesh_path):
        raise MissingArtifactError(f"{mesh_path}: mesh not found (produced by `pointuv make-mesh`)")
    mesh = load_obj(mesh_path)
    coarse_model, _ = load_stage(coarse_path, "coarse", "train-coarse")
    fine_model, fine_info = None, {}
    if cfg.sample.fine_stage:
        fine_model, fine_info = load_stage(fine_path, "fine", "train-fine")
    texture, x_coarse, maps, label = texture_mesh(mesh, coarse_model, fine_model, fine_info,
                                                  style, seed, cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_png(os.path.join(out_dir, "texture.png"), texture)
    write_png(os.path.join(out_dir, "coarse.png"), x_coarse)
    report = EvalReport(seam_discrepancy=seam_discrepancy(mesh, maps, texture),
                        gradient_energy=gradient_energy(texture, maps.mask))
    info = {"seed": int(seed), "style": -1 if label is None else int(label),
            "t_c": cfg.sample.t_c, "fine_stage": cfg.sample.fine_stage, **report.items()}
    write_kv(os.path.join(out_dir, "report.txt"), {k: _fmt(v) for k, v in info.items()})
    write_json(os.path.join(out_dir, "report.json"), info)
    return info


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) and not isinstance(v, bool) else v

