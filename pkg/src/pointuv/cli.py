"""``pointuv`` command line: dataset, preprocessing, training, sampling, evaluation.

Every command writes its artifacts plus ``manifest.json`` (arguments, the
full resolved configuration and library versions) into ``--out``.  Errors are
reported on one line as ``<ErrorClass>: <message>`` with a nonzero exit.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import MissingArtifactError, PointUVError
from .io import write_json, write_kv

log = logging.getLogger("pointuv")


# -- helpers -----------------------------------------------------------------

def _config(args, extra: dict | None = None):
    from .pipeline.config import load_config
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            from .errors import ConfigError
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    overrides["train.threads"] = str(args.threads)
    for key, value in (extra or {}).items():
        if value is not None:
            overrides[key] = str(value)
    return load_config(args.config, args.preset, overrides)


def _manifest(args, cfg=None, **info):
    import torch
    record = {"command": args.command, "version": __version__,
              "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
              "versions": {"numpy": np.__version__, "torch": torch.__version__}, **info}
    if cfg is not None:
        record["config"] = cfg.flat()
    write_json(os.path.join(args.out, "manifest.json"), record)


def _require(path, what, producer):
    if path is None or not os.path.exists(path):
        raise MissingArtifactError(f"{path}: {what} not found (produced by `pointuv {producer}`)")
    return path


def _set_threads(n):
    import torch
    torch.set_num_threads(max(1, int(n)))


def _write_losses(path, losses):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in losses:
            fh.write(f"{v:.8g}\n")


# -- commands ----------------------------------------------------------------

def cmd_make_mesh(args):
    from .geometry import make_shape, write_obj
    mesh = make_shape(args.shape, args.subdiv)
    os.makedirs(args.out, exist_ok=True)
    write_obj(mesh, os.path.join(args.out, "mesh.obj"))
    _manifest(args, triangles=mesh.n_triangles)


def cmd_make_dataset(args):
    from .pipeline.dataset import generate_dataset, save_dataset
    cfg = _config(args, {"data.n_items": args.items, "data.resolution": args.resolution,
                         "data.points": args.points, "data.seed": args.seed})
    items, style = generate_dataset(cfg)
    save_dataset(items, args.out, style)
    _manifest(args, cfg, items=len(items))


def cmd_preprocess(args):
    from .geometry import load_obj, rasterize_shape_maps, sample_points, save_maps, save_points
    cfg = _config(args, {"data.resolution": args.resolution, "data.points": args.points})
    mesh = load_obj(_require(args.mesh, "mesh", "make-mesh"))
    res = cfg.data.resolution
    maps = rasterize_shape_maps(mesh, res, res)
    seed = args.seed or 0
    pts = sample_points(mesh, maps, cfg.data.points, seed, cfg.data.oversample)
    os.makedirs(args.out, exist_ok=True)
    save_maps(os.path.join(args.out, "maps.puvd"), maps)
    save_points(os.path.join(args.out, "points.puvd"), pts, {"seed": seed})
    cover = float(maps.mask.mean())
    write_kv(os.path.join(args.out, "coverage.txt"),
             {"valid_texels": maps.n_valid, "mask_fraction": f"{cover:.6f}",
              "uv_area": f"{float(mesh.uv_areas().sum()):.6f}"})
    _manifest(args, cfg, valid_texels=maps.n_valid)


def _load_items(args, cfg, with_views=False):
    from .pipeline.dataset import load_dataset
    return load_dataset(_require(args.data, "dataset directory", "make-dataset"), cfg, with_views)


def _apply_labels(items, path):
    from .io import read_kv
    labels = read_kv(_require(path, "style labels", "cluster-styles"))
    for it in items:
        if it.name not in labels:
            raise MissingArtifactError(f"{path}: no style label for {it.name} (rerun `pointuv cluster-styles`)")
        it.style = int(labels[it.name])


def cmd_cluster_styles(args):
    from .pipeline.dataset import fit_style
    cfg = _config(args, {"style.seed": args.seed})
    items = _load_items(args, cfg)
    model = fit_style(items, cfg)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "style.puvd"))
    write_kv(os.path.join(args.out, "labels.txt"), {it.name: it.style for it in items})
    _manifest(args, cfg, k_clusters=model.k_clusters)


def cmd_train_coarse(args):
    from .nets import save_checkpoint
    from .pipeline.coarse import train_coarse
    from .report import loss_curves
    cfg = _config(args, {"coarse.steps": args.steps, "train.seed": args.seed})
    items = _load_items(args, cfg)
    if cfg.style.enabled:
        if args.labels:
            _apply_labels(items, args.labels)
        elif min(it.style for it in items) < 0:
            raise MissingArtifactError(f"{args.data}: items carry no style labels "
                                       "(produced by `pointuv cluster-styles`; pass --labels)")
    result = train_coarse(items, cfg, cfg.train.seed)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "coarse.puvd"), result.model, result.state, "coarse",
                    {"points": cfg.data.points})
    _write_losses(os.path.join(args.out, "loss.txt"), result.losses)
    loss_curves({"coarse": result.losses}, os.path.join(args.out, "loss.png"))
    _manifest(args, cfg, steps=result.state.step, rejected_steps=result.state.rejected)


def cmd_train_fine(args):
    from .nets import save_checkpoint
    from .pipeline.fine import fine_meta, train_fine
    from .report import loss_curves
    cfg = _config(args, {"fine.steps": args.steps, "fine.p_hybrid": args.p_hybrid,
                         "train.seed": args.seed})
    items = _load_items(args, cfg, with_views=cfg.fine.render_weight > 0)
    result = train_fine(items, cfg, cfg.train.seed)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "fine.puvd"), result.model, result.state, "fine",
                    fine_meta(cfg))
    _write_losses(os.path.join(args.out, "loss.txt"), result.losses)
    loss_curves({"fine": result.losses}, os.path.join(args.out, "loss.png"))
    _manifest(args, cfg, steps=result.state.step, **result.counters)


def cmd_sample(args):
    from .pipeline.generate import generate
    cfg = _config(args, {"sample.t_c": args.t_c, "data.resolution": args.resolution,
                         "data.points": args.points})
    _set_threads(args.threads)
    info = generate(args.mesh, args.coarse, args.fine, args.style, args.seed or 0, args.out, cfg)
    _manifest(args, cfg, style_used=info["style"])
    for k, v in info.items():
        print(f"{k}={v}")


def cmd_eval(args):
    from .evalkit import (EvalReport, gradient_energy, histogram_emd, masked_psnr,
                          pairwise_diversity)
    from .geometry import load_maps, load_obj, seam_discrepancy
    from .io import read_png
    from .report import color_histograms, texture_grid
    maps = load_maps(_require(args.maps, "shape maps", "preprocess"))
    preds = [read_png(_require(p, "texture", "sample")) * maps.mask for p in args.pred]
    report = EvalReport(gradient_energy=float(np.mean([gradient_energy(p, maps.mask) for p in preds])))
    if len(preds) >= 2:
        report.pairwise_diversity = pairwise_diversity(np.stack(preds), maps.mask)
    if args.mesh:
        mesh = load_obj(_require(args.mesh, "mesh", "make-mesh"))
        report.seam_discrepancy = float(np.mean([seam_discrepancy(mesh, maps, p) for p in preds]))
    if args.gt:
        gt = read_png(_require(args.gt, "reference texture", "make-dataset")) * maps.mask
        report.masked_psnr = masked_psnr(preds[0], gt, maps.mask)
        report.histogram_emd = histogram_emd(preds[0], gt, maps.mask, args.bins)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_kv())
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    texture_grid(preds, os.path.join(args.out, "textures.png"),
                 [os.path.basename(p) for p in args.pred])
    if args.gt:
        color_histograms(preds[0], gt, maps.mask, os.path.join(args.out, "histograms.png"), args.bins)
    _manifest(args)
    sys.stdout.write(report.to_kv())


def cmd_ablate(args):
    from .pipeline.ablation import compare, run_seed
    from .pipeline.dataset import generate_dataset
    from .report import comparison_bars, loss_curves, texture_grid
    cfg = _config(args)
    items, _ = generate_dataset(cfg)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    outcomes = []
    os.makedirs(args.out, exist_ok=True)
    for s in seeds:
        o = run_seed(items, cfg, s, args.per_shape)
        outcomes.append(o)
        flat = {f"{p}.{k}": f"{v:.6f}" for p, d in o.metrics.items() for k, v in d.items()}
        write_kv(os.path.join(args.out, f"seed_{s}.txt"), flat)
        shape = next(iter(o.textures["full"]))
        grid = [t for p in o.textures for t in o.textures[p][shape]]
        names = [p for p in o.textures for _ in o.textures[p][shape]]
        texture_grid(grid, os.path.join(args.out, f"seed_{s}_{shape}.png"), names, args.per_shape)
        loss_curves(o.losses, os.path.join(args.out, f"seed_{s}_losses.png"))
    mean = {p: {k: float(np.mean([o.metrics[p][k] for o in outcomes])) for k in outcomes[0].metrics[p]}
            for p in outcomes[0].metrics}
    comparison_bars(mean, os.path.join(args.out, "metrics.png"))
    lines = {}
    for c in compare(outcomes):
        key = c.name.split(":")[0]
        lines[f"{key}.gap"] = f"{c.gap:.6f}"
        lines[f"{key}.stderr"] = f"{c.stderr:.6f}" if len(seeds) > 1 else "nan"
        lines[f"{key}.holds"] = int(c.holds)
    write_kv(os.path.join(args.out, "summary.txt"), lines)
    _manifest(args, cfg, seeds=seeds)
    for k, v in lines.items():
        print(f"{k}={v}")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (section.key = value)")
    common.add_argument("--preset", help="named ablation preset")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    common.add_argument("--seed", type=int, help="seed (defaults to the relevant config seed, else 0)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", required=True, help="output directory")

    p = argparse.ArgumentParser(prog="pointuv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pointuv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("make-mesh", parents=[common], help="write a procedural UV-mapped mesh")
    c.add_argument("--shape", required=True)
    c.add_argument("--subdiv", type=int, default=4)
    c.set_defaults(func=cmd_make_mesh)

    c = sub.add_parser("make-dataset", parents=[common], help="generate the procedural dataset")
    c.add_argument("--items", type=int)
    c.add_argument("--resolution", type=int)
    c.add_argument("--points", type=int)
    c.set_defaults(func=cmd_make_dataset)

    c = sub.add_parser("preprocess", parents=[common], help="rasterise shape maps and sample points")
    c.add_argument("--mesh", required=True)
    c.add_argument("--resolution", type=int)
    c.add_argument("--points", type=int)
    c.set_defaults(func=cmd_preprocess)

    c = sub.add_parser("cluster-styles", parents=[common], help="fit style labels on point colours")
    c.add_argument("--data", required=True)
    c.set_defaults(func=cmd_cluster_styles)

    c = sub.add_parser("train-coarse", parents=[common], help="train the point-colour denoiser")
    c.add_argument("--data", required=True)
    c.add_argument("--labels", help="labels.txt from cluster-styles")
    c.add_argument("--steps", type=int)
    c.set_defaults(func=cmd_train_coarse)

    c = sub.add_parser("train-fine", parents=[common], help="train the UV denoiser")
    c.add_argument("--data", required=True)
    c.add_argument("--p-hybrid", type=float)
    c.add_argument("--steps", type=int)
    c.set_defaults(func=cmd_train_fine)

    c = sub.add_parser("sample", parents=[common], help="texture a mesh")
    c.add_argument("--mesh", required=True)
    c.add_argument("--coarse", required=True)
    c.add_argument("--fine")
    c.add_argument("--style", type=int)
    c.add_argument("--t-c", type=float)
    c.add_argument("--resolution", type=int)
    c.add_argument("--points", type=int)
    c.set_defaults(func=cmd_sample)

    c = sub.add_parser("eval", parents=[common], help="score generated textures")
    c.add_argument("--pred", required=True, nargs="+")
    c.add_argument("--maps", required=True)
    c.add_argument("--gt")
    c.add_argument("--mesh")
    c.add_argument("--bins", type=int, default=32)
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("ablate", parents=[common], help="run the preset comparison")
    c.add_argument("--seeds", default="0")
    c.add_argument("--per-shape", type=int, default=5)
    c.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        args.func(args)
    except PointUVError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
