"""Acceptance criteria 1-9.  Each ``test_criterion_N_*`` contributes to the
PASS/FAIL line of criterion N printed at the end of the run."""
import math
import os
import time

import numpy as np
import pytest
import torch

from oracles import (central_difference, flood_fill_labels, fps_step_violations, knn_fill_bruteforce,
                     parameter_fd_errors, same_partition, seam_discrepancy_bruteforce)
from pointuv.cli import main
from pointuv.diffusion import (ancestral_sample, loss_x0, q_sample, q_step, truncated_conditional_sample,
                               truncation_steps)
from pointuv.geometry import (build_view_rasters, fps_indices, knn_fill, label_components, make_shape,
                              rasterize_shape_maps, render_l1_and_grad, sample_points, seam_discrepancy)
from pointuv.nets import CoarseNet, UVDenoiser, gaussian_oracle_denoiser
from pointuv.pipeline.ablation import compare, run_seed
from pointuv.pipeline.coarse import train_coarse
from pointuv.pipeline.config import PipelineConfig
from pointuv.pipeline.dataset import generate_dataset
from pointuv.pipeline.fine import build_hybrid_condition, train_fine
from pointuv.schedule import build_cosine, build_linear


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_schedule_conformance():
    start = time.perf_counter()
    lin = build_linear(1000, 1e-4, 0.02)
    assert lin.beta[1] == 1e-4 and lin.beta[1000] == 0.02
    for s in (lin, build_cosine(1024)):
        t = np.arange(1, s.T + 1)
        lhs = s.post_coef_x0[t] + s.post_coef_xt[t] * np.sqrt(s.alpha_bar[t])
        rhs = np.sqrt(s.alpha_bar[t - 1])
        assert np.max(np.abs(lhs - rhs) / rhs) < 1e-12
    assert time.perf_counter() - start < 1.0


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_forward_process_law():
    start = time.perf_counter()
    s = build_cosine(16)
    rng = np.random.default_rng(0)
    n = 100_000
    x0 = rng.uniform(-1, 1, n)
    x = x0.copy()
    for t in range(1, 17):
        x = q_step(s, x, t, rng.standard_normal(n))
        direct = q_sample(s, x0, t, rng.standard_normal(n))
        # same conditional law given x0: residual mean 0, variance 1 - abar_t
        r_it = x - math.sqrt(s.alpha_bar[t]) * x0
        r_cf = direct - math.sqrt(s.alpha_bar[t]) * x0
        var = s.one_minus_alpha_bar[t]
        se_mean = math.sqrt(var / n)
        se_var = var * math.sqrt(2.0 / (n - 1))
        for r in (r_it, r_cf):
            assert abs(r.mean()) < 4 * se_mean
            assert abs(r.var(ddof=1) - var) < 4 * se_var
        assert abs(x.mean() - direct.mean()) < 4 * math.sqrt(x.var() / n + direct.var() / n)
    assert time.perf_counter() - start < 30.0


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_analytic_sampler(acceptance_note):
    start = time.perf_counter()
    s = build_cosine(64)
    out = ancestral_sample(s, gaussian_oracle_denoiser(s), None, (10_000, 16), 0, clip=None)
    mean, var = out.mean(0), out.var(0)
    acceptance_note(f"c3: max|mean|={np.abs(mean).max():.4f} var in [{var.min():.4f}, {var.max():.4f}]")
    assert np.all(np.abs(mean) < 0.05)
    assert np.all((var >= 0.95) & (var <= 1.05))
    assert time.perf_counter() - start < 120.0


# -- 4 -----------------------------------------------------------------------

def _randomize(model, seed, scale):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


def test_criterion_4_gradients(acceptance_note):
    start = time.perf_counter()
    s = build_cosine(64)
    g = torch.Generator().manual_seed(0)
    worst = {}

    torch.manual_seed(0)
    point = _randomize(CoarseNet(hidden=16, emb_dim=8, n_styles=3, encoder_width=4).double(), 1, 0.3)
    xs = torch.randn(1, 7, 8, 8, generator=g, dtype=torch.float64)
    zc = torch.randn(1, 6, 16, generator=g, dtype=torch.float64)
    z0 = torch.rand(1, 3, 16, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(1, 3, 16, generator=g, dtype=torch.float64)
    errs = parameter_fd_errors(point, lambda: loss_x0(s, lambda z, t, c: point(z, zc, xs, t, 1), z0, 20, eps))
    worst["point"] = max(errs.values())
    assert len(errs) == len(list(point.parameters()))

    uv = _randomize(UVDenoiser((8, 8, 8), emb_dim=8).double(), 2, 0.2)
    cond = [torch.randn(1, c, 8, 8, generator=g, dtype=torch.float64) for c in (7, 3, 3)]
    x0 = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(1, 3, 8, 8, generator=g, dtype=torch.float64)
    errs = parameter_fd_errors(uv, lambda: loss_x0(s, lambda x, t, c: uv(x, *cond, t), x0, 30, eps))
    worst["uv"] = max(errs.values())
    assert len(errs) == len(list(uv.parameters()))

    mesh = make_shape("cube", 2)
    maps = rasterize_shape_maps(mesh, 8, 8)
    views = build_view_rasters(mesh, maps, 2, 16, seed=3)
    rng = np.random.default_rng(4)
    gt = rng.uniform(-1, 1, (3, 8, 8))
    pred = gt + rng.choice([-1, 1], size=gt.shape) * rng.uniform(0.1, 0.5, gt.shape)
    offsets = [(1, 2), (3, 0)]
    _, grad = render_l1_and_grad(views, pred, gt, 12, offsets=offsets)
    fd = central_difference(lambda x: render_l1_and_grad(views, x, gt, 12, offsets=offsets)[0],
                            pred.copy(), 1e-6)
    worst["render"] = float(np.linalg.norm(fd - grad) / np.linalg.norm(grad))
    acceptance_note("c4: worst relative FD error " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-4
    assert time.perf_counter() - start < 120.0


# -- 5 -----------------------------------------------------------------------

SHAPE_POOL = ("cube", "cylinder", "torus", "two_chart_quad", "icosphere")


def test_criterion_5_geometry_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    for i in range(50):
        # KNN fill
        mesh = make_shape(SHAPE_POOL[i % len(SHAPE_POOL)], 2)
        res = int(rng.integers(8, 13))
        maps = rasterize_shape_maps(mesh, res, res)
        K = int(rng.integers(4, 12))
        pts = sample_points(mesh, maps, K, int(rng.integers(1 << 30)))
        pts.colors = rng.uniform(-1, 1, (K, 3))
        k = int(rng.integers(1, 4))
        ref = knn_fill_bruteforce(pts.positions, pts.colors, pts.texel, maps.coord, maps.mask, k)
        np.testing.assert_allclose(knn_fill(pts, maps, k), ref, atol=1e-6)

        # FPS max-min steps
        pool = rng.uniform(size=(int(rng.integers(10, 40)), 3))
        chosen = fps_indices(pool, int(rng.integers(2, 10)), int(rng.integers(len(pool))))
        assert fps_step_violations(pool, list(chosen)) == []

        # 4-connected components
        mask = rng.random((int(rng.integers(4, 12)), int(rng.integers(4, 12)))) < rng.uniform(0.3, 0.7)
        lab, n = label_components(mask)
        ref_lab, m = flood_fill_labels(mask)
        assert n == m and same_partition(lab, ref_lab)

        # seam metric
        tex = rng.uniform(-1, 1, (3, res, res)) * maps.mask
        near = maps.nearest_valid_index()
        pick = lambda cand, a, b: near[a, b] if near[a, b] in cand else -1  # noqa: E731
        ref = seam_discrepancy_bruteforce(mesh.triangles, mesh.corner_uvs, maps.mask, tex, 8, pick)
        assert abs(seam_discrepancy(mesh, maps, tex) - ref) < 1e-6
    assert time.perf_counter() - start < 60.0


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_hybrid_frequency():
    rng = np.random.default_rng(6)
    xc, xs = np.ones((3, 2, 2)), np.zeros((3, 2, 2))
    n, p = 10_000, 0.3
    hits = sum(build_hybrid_condition(xc, xs, p, rng)[1] for _ in range(n))
    band = 4 * math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= band


@pytest.mark.parametrize("t_c,expected", [(0.0, 0), (0.4, 26), (1.0, 64)])
def test_criterion_6_truncation_steps(t_c, expected):
    s = build_cosine(64)
    seen = []

    def den(x, t, c):
        seen.append((t, bool(np.any(c["x_coarse"]))))
        return np.zeros_like(x)

    truncated_conditional_sample(s, den, {"x_shape": np.ones(2)}, {"x_coarse": np.ones(2)}, t_c,
                                 (2,), 0)
    assert truncation_steps(64, t_c) == expected
    assert [t for t, _ in seen] == list(range(64, 0, -1))
    assert [t for t, on in seen if on] == list(range(64, 64 - expected, -1))


# -- 7 -----------------------------------------------------------------------

N_SEEDS = 5
TRAIN_BUDGET_S = 30 * 60


@pytest.mark.slow
def test_criterion_7_toy_end_to_end(acceptance_note):
    cfg = PipelineConfig()
    assert (cfg.data.n_items, cfg.data.resolution, cfg.data.points, cfg.diffusion.T) == (30, 64, 256, 64)
    items, _ = generate_dataset(cfg)
    outcomes = [run_seed(items, cfg, seed, n_per_shape=5) for seed in range(N_SEEDS)]
    # single-threaded training: process CPU time is the budget; wall time is
    # reported too but includes any pauses of the host
    train_s = sum(o.train_cpu_seconds for o in outcomes)
    wall_s = sum(o.train_seconds for o in outcomes)
    n_textures = sum(len(b) for b in outcomes[0].textures["full"].values())
    acceptance_note(f"c7: training {train_s:.0f} s CPU ({wall_s:.0f} s wall) over {N_SEEDS} seeds, "
                    f"{n_textures} textures per preset")
    comps = compare(outcomes)
    for c in comps:
        acceptance_note(f"c7: {c.name}: gap={c.gap:.5f} stderr={c.stderr:.5f} "
                        f"per-seed={np.round(c.diffs, 5).tolist()} holds={c.holds}")
    assert n_textures == 20
    assert train_s <= TRAIN_BUDGET_S
    assert all(c.holds for c in comps)


# -- 8 -----------------------------------------------------------------------

# Frozen from the first verified run (mean of the last 100 logged losses on a
# single item, default config, training seed 0); observed values are recorded
# next to each bound.
OVERFIT_COARSE_STEPS = 2000
OVERFIT_COARSE_BOUND = 0.08   # observed 0.0673; flat from step 500 on
OVERFIT_FINE_STEPS = 1000
OVERFIT_FINE_BOUND = 0.01     # observed 0.0026


def test_criterion_8_overfit_regression(acceptance_note):
    cfg = PipelineConfig().with_overrides({"coarse.steps": str(OVERFIT_COARSE_STEPS),
                                           "fine.steps": str(OVERFIT_FINE_STEPS)})
    items, _ = generate_dataset(cfg, n_items=1)
    items[0].style = 0
    coarse = np.mean(train_coarse(items, cfg, 0, n_styles=1).losses[-100:])
    fine = np.mean(train_fine(items, cfg, 0).losses[-100:])
    acceptance_note(f"c8: L_coarse={coarse:.4f} (bound {OVERFIT_COARSE_BOUND}), "
                    f"L_fine={fine:.4f} (bound {OVERFIT_FINE_BOUND})")
    assert coarse < OVERFIT_COARSE_BOUND
    assert fine < OVERFIT_FINE_BOUND


# -- 9 -----------------------------------------------------------------------

TINY = """\
diffusion.T = 8
data.n_items = 4
data.resolution = 32
data.points = 48
data.subdiv = 2
data.n_views = 2
data.img_res = 32
fine.crop = 32
fine.channels = 4,8
fine.emb_dim = 8
fine.batch = 2
fine.coarse_variants = 1
coarse.hidden = 16
coarse.emb_dim = 8
coarse.encoder_width = 4
coarse.batch = 2
style.k_clusters = 2
style.n_components = 2
"""


def _snapshot(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            with open(os.path.join(root, f), "rb") as fh:
                out[os.path.relpath(os.path.join(root, f), d)] = fh.read()
    return out


def test_criterion_9_cli_determinism(tmp_path, acceptance_note):
    (tmp_path / "tiny.cfg").write_text(TINY)
    c = ["--config", str(tmp_path / "tiny.cfg"), "--threads", "1"]
    w = str(tmp_path)
    ladder = [
        ["make-mesh", "--shape", "torus", "--subdiv", "2", "--out", f"{w}/mesh"],
        ["preprocess", *c, "--mesh", f"{w}/mesh/mesh.obj", "--out", f"{w}/pre"],
        ["make-dataset", *c, "--out", f"{w}/data"],
        ["cluster-styles", *c, "--data", f"{w}/data", "--out", f"{w}/style"],
        ["train-coarse", *c, "--data", f"{w}/data", "--labels", f"{w}/style/labels.txt", "--steps", "6",
         "--out", f"{w}/coarse"],
        ["train-fine", *c, "--data", f"{w}/data", "--steps", "3", "--out", f"{w}/fine"],
        ["sample", *c, "--mesh", f"{w}/mesh/mesh.obj", "--coarse", f"{w}/coarse/coarse.puvd",
         "--fine", f"{w}/fine/fine.puvd", "--seed", "4", "--out", f"{w}/sample"],
        ["eval", "--threads", "1", "--pred", f"{w}/sample/texture.png", f"{w}/sample/coarse.png",
         "--maps", f"{w}/pre/maps.puvd", "--mesh", f"{w}/mesh/mesh.obj", "--out", f"{w}/eval"],
        ["ablate", *c, "--set", "coarse.steps=3", "--set", "fine.steps=2", "--seeds", "0,1",
         "--per-shape", "2", "--out", f"{w}/ablate"],
    ]
    files = 0
    for argv in ladder:
        out = argv[argv.index("--out") + 1]
        assert main(argv) == 0, argv[0]
        first = _snapshot(out)
        assert main(argv) == 0, argv[0]
        second = _snapshot(out)
        assert first.keys() == second.keys() and first, argv[0]
        differing = [k for k in first if first[k] != second[k]]
        assert differing == [], (argv[0], differing)
        files += len(first)
    acceptance_note(f"c9: {len(ladder)} commands, {files} artifacts byte-identical across reruns")
